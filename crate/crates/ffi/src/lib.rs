//! C ABI over `vcn-core`.
//!
//! Every function returns a [`VcnStatus`]. On failure the message is kept
//! per thread and can be read with [`vcn_last_error`]. Buffers handed out by
//! the library belong to the caller and go back through [`vcn_buffer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vcn_core::codec::{decode_scic, encode_scic, Bitstream};
use vcn_core::dataset::GrayImage;
use vcn_core::eval;
use vcn_core::pipeline::Model;
use vcn_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VcnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    NonFinite = 5,
    Codec = 6,
    Checksum = 7,
    Config = 8,
    Contract = 9,
    Io = 10,
    Panic = 11,
}

impl From<&Error> for VcnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => VcnStatus::Shape,
            Error::Format { .. } => VcnStatus::Format,
            Error::InvalidArgument(_) => VcnStatus::InvalidArgument,
            Error::NonFinite(_) => VcnStatus::NonFinite,
            Error::Codec(_) => VcnStatus::Codec,
            Error::Checksum { .. } => VcnStatus::Checksum,
            Error::Config(_) => VcnStatus::Config,
            Error::Contract(_) => VcnStatus::Contract,
            Error::Io(_) => VcnStatus::Io,
        }
    }
}

/// Opaque trained model.
pub struct VcnModel {
    inner: Model,
}

/// Bytes owned by the library. Free with [`vcn_buffer_free`].
#[repr(C)]
pub struct VcnBuffer {
    pub data: *mut u8,
    pub len: usize,
}

impl VcnBuffer {
    const EMPTY: VcnBuffer = VcnBuffer {
        data: ptr::null_mut(),
        len: 0,
    };

    fn from_vec(v: Vec<u8>) -> Self {
        let mut b = v.into_boxed_slice();
        let out = VcnBuffer {
            data: b.as_mut_ptr(),
            len: b.len(),
        };
        std::mem::forget(b);
        out
    }
}

/// Decoded 8-bit grayscale image, row-major.
#[repr(C)]
pub struct VcnImage {
    pub pixels: VcnBuffer,
    pub width: usize,
    pub height: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (VcnStatus, String)>) -> VcnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VcnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            VcnStatus::Panic
        }
    }
}

fn core<T>(r: vcn_core::Result<T>) -> Result<T, (VcnStatus, String)> {
    r.map_err(|e| (VcnStatus::from(&e), e.to_string()))
}

fn null(what: &str) -> (VcnStatus, String) {
    (VcnStatus::NullPointer, format!("{} is null", what))
}

unsafe fn slice<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], (VcnStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn image(pixels: *const u8, width: usize, height: usize) -> Result<GrayImage, (VcnStatus, String)> {
    let n = width
        .checked_mul(height)
        .ok_or((VcnStatus::InvalidArgument, "image size overflows".to_string()))?;
    let px = slice(pixels, n, "pixels")?;
    core(GrayImage::new(width, height, px.to_vec()))
}

fn write_image(out: *mut VcnImage, img: GrayImage) {
    let (w, h) = (img.width(), img.height());
    // SAFETY: callers check `out` for null before decoding.
    unsafe {
        *out = VcnImage {
            pixels: VcnBuffer::from_vec(img.samples().to_vec()),
            width: w,
            height: h,
        };
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn vcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn vcn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint written by `vcn train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vcn_model_load(path: *const c_char, out: *mut *mut VcnModel) -> VcnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (VcnStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let inner = core(Model::load(p))?;
        *out = Box::into_raw(Box::new(VcnModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`vcn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vcn_model_free(model: *mut VcnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Compresses a `width x height` grayscale image with a trained model.
/// `quality` (1..=100) is used by the standard-codec path only.
///
/// # Safety
/// `pixels` must hold `width * height` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vcn_compress(
    model: *const VcnModel,
    pixels: *const u8,
    width: usize,
    height: usize,
    quality: u8,
    out: *mut VcnBuffer,
) -> VcnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = VcnBuffer::EMPTY;
        let img = image(pixels, width, height)?;
        let bs = core(m.inner.compress(&img, quality))?;
        *out = VcnBuffer::from_vec(bs.to_bytes());
        Ok(())
    })
}

/// Decodes a stream produced by [`vcn_compress`] with the same model.
///
/// # Safety
/// `data` must hold `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vcn_decompress(
    model: *const VcnModel,
    data: *const u8,
    len: usize,
    out: *mut VcnImage,
) -> VcnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let bs = core(Bitstream::from_bytes(slice(data, len, "data")?))?;
        let img = core(m.inner.decompress(&bs))?;
        write_image(out, img);
        Ok(())
    })
}

/// Standard block-DCT codec, no model involved.
///
/// # Safety
/// `pixels` must hold `width * height` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vcn_jpeg_encode(
    pixels: *const u8,
    width: usize,
    height: usize,
    quality: u8,
    out: *mut VcnBuffer,
) -> VcnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = VcnBuffer::EMPTY;
        let img = image(pixels, width, height)?;
        *out = VcnBuffer::from_vec(core(encode_scic(&img, quality))?.to_bytes());
        Ok(())
    })
}

/// # Safety
/// `data` must hold `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vcn_jpeg_decode(data: *const u8, len: usize, out: *mut VcnImage) -> VcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bs = core(Bitstream::from_bytes(slice(data, len, "data")?))?;
        write_image(out, core(decode_scic(&bs))?);
        Ok(())
    })
}

/// # Safety
/// `buf` must be null or come from this library; it is reset to empty.
#[no_mangle]
pub unsafe extern "C" fn vcn_buffer_free(buf: *mut VcnBuffer) {
    if let Some(b) = buf.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(std::slice::from_raw_parts_mut(b.data, b.len)));
        }
        *b = VcnBuffer::EMPTY;
    }
}

unsafe fn metric(
    a: *const u8,
    b: *const u8,
    width: usize,
    height: usize,
    out: *mut f64,
    f: fn(&GrayImage, &GrayImage) -> vcn_core::Result<f64>,
) -> VcnStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (x, y) = (image(a, width, height)?, image(b, width, height)?);
        *out = core(f(&x, &y))?;
        Ok(())
    })
}

/// PSNR in dB between two images of equal size.
///
/// # Safety
/// `a` and `b` must each hold `width * height` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vcn_psnr(a: *const u8, b: *const u8, width: usize, height: usize, out: *mut f64) -> VcnStatus {
    metric(a, b, width, height, out, eval::psnr)
}

/// Mean SSIM between two images of equal size.
///
/// # Safety
/// `a` and `b` must each hold `width * height` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vcn_ssim(a: *const u8, b: *const u8, width: usize, height: usize, out: *mut f64) -> VcnStatus {
    metric(a, b, width, height, out, eval::ssim_metric)
}
