use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use vcn_core::dataset::synth;
use vcn_core::selftest::random_dnnc_model;
use vcn_ffi::*;

fn empty_image() -> VcnImage {
    VcnImage {
        pixels: VcnBuffer {
            data: ptr::null_mut(),
            len: 0,
        },
        width: 0,
        height: 0,
    }
}

fn last_error() -> String {
    let p = vcn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_roundtrip_through_handles() {
    let img = synth::scene(32, 32, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    random_dnnc_model(4, 4, 1, &img).unwrap().save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(vcn_model_load(cpath.as_ptr(), &mut model), VcnStatus::Ok);
        assert!(vcn_last_error().is_null());
        let mut stream = VcnBuffer {
            data: ptr::null_mut(),
            len: 0,
        };
        let px = img.samples();
        assert_eq!(vcn_compress(model, px.as_ptr(), 32, 32, 0, &mut stream), VcnStatus::Ok);
        assert!(stream.len > 0);
        let mut out = empty_image();
        assert_eq!(vcn_decompress(model, stream.data, stream.len, &mut out), VcnStatus::Ok);
        assert_eq!((out.width, out.height, out.pixels.len), (32, 32, 1024));

        let mut psnr = 0.0;
        assert_eq!(vcn_psnr(px.as_ptr(), out.pixels.data, 32, 32, &mut psnr), VcnStatus::Ok);
        assert!(psnr.is_finite() && psnr > 0.0);

        vcn_buffer_free(&mut stream);
        assert!(stream.data.is_null() && stream.len == 0);
        vcn_buffer_free(&mut out.pixels);
        vcn_model_free(model);
    }
}

#[test]
fn standard_codec_and_metrics() {
    let img = synth::scene(40, 24, 5);
    let px = img.samples();
    unsafe {
        let mut stream = VcnBuffer {
            data: ptr::null_mut(),
            len: 0,
        };
        assert_eq!(vcn_jpeg_encode(px.as_ptr(), 40, 24, 75, &mut stream), VcnStatus::Ok);
        let mut out = empty_image();
        assert_eq!(vcn_jpeg_decode(stream.data, stream.len, &mut out), VcnStatus::Ok);
        assert_eq!((out.width, out.height), (40, 24));
        let (mut p, mut s) = (0.0, 0.0);
        assert_eq!(vcn_psnr(px.as_ptr(), out.pixels.data, 40, 24, &mut p), VcnStatus::Ok);
        assert_eq!(vcn_ssim(px.as_ptr(), out.pixels.data, 40, 24, &mut s), VcnStatus::Ok);
        assert!(p > 25.0, "psnr {}", p);
        assert!(s > 0.8 && s <= 1.0, "ssim {}", s);
        assert_eq!(vcn_ssim(px.as_ptr(), px.as_ptr(), 40, 24, &mut s), VcnStatus::Ok);
        assert_eq!(s, 1.0);
        vcn_buffer_free(&mut stream);
        vcn_buffer_free(&mut out.pixels);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(vcn_model_load(ptr::null(), &mut model), VcnStatus::NullPointer);
        assert!(last_error().contains("path"));

        let missing = CString::new("/nonexistent/model.ckpt").unwrap();
        assert_eq!(vcn_model_load(missing.as_ptr(), &mut model), VcnStatus::Io);
        assert!(model.is_null());

        let junk = [0u8, 1, 2, 3, 4, 5, 6, 7];
        let mut out = empty_image();
        let status = vcn_jpeg_decode(junk.as_ptr(), junk.len(), &mut out);
        assert!(matches!(status, VcnStatus::Format | VcnStatus::Checksum), "{:?}", status);
        assert!(!last_error().is_empty());

        let px = [0u8; 16];
        let mut v = 0.0;
        assert_eq!(vcn_psnr(px.as_ptr(), ptr::null(), 4, 4, &mut v), VcnStatus::NullPointer);
        let mut buf = VcnBuffer {
            data: ptr::null_mut(),
            len: 0,
        };
        assert_eq!(vcn_jpeg_encode(px.as_ptr(), 4, 4, 0, &mut buf), VcnStatus::InvalidArgument);
        assert!(buf.data.is_null());

        // success clears the message
        assert_eq!(vcn_psnr(px.as_ptr(), px.as_ptr(), 4, 4, &mut v), VcnStatus::Ok);
        assert!(vcn_last_error().is_null());
        vcn_model_free(ptr::null_mut());
        vcn_buffer_free(ptr::null_mut());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(vcn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vcn.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "vcn_model_load",
        "vcn_model_free",
        "vcn_compress",
        "vcn_decompress",
        "vcn_jpeg_encode",
        "vcn_jpeg_decode",
        "vcn_buffer_free",
        "vcn_psnr",
        "vcn_ssim",
        "vcn_last_error",
        "VCN_STATUS_NULL_POINTER",
        "typedef struct VcnModel VcnModel",
    ] {
        assert!(text.contains(name), "header lacks {}", name);
    }
    // syntax check with whatever C compiler is around
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99"]).arg(&header).output() else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
