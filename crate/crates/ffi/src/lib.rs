//! C ABI for the codec.
//!
//! Every function returns an [`N2lStatus`]; on failure the message is kept
//! per thread and can be read with [`n2l_last_error`]. Results come back
//! through opaque handles that the caller releases with the matching
//! `*_free` function. Status values match the exit codes of the `n2l` CLI.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use n2l::bitstream::deserialize;
use n2l::codec::{decode, encode, EncodeOptions};
use n2l::image_io::{rgb8_to_tensor, tensor_to_rgb8};
use n2l::model::Setting;
use n2l::train::TrainConfig;
use n2l::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum N2lStatus {
    Ok = 0,
    /// A null pointer or an argument outside its range.
    InvalidArgument = 1,
    BadInput = 2,
    Malformed = 3,
    Diverged = 4,
    BadDimensions = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 70,
}

/// Bytes of an encoded stream.
pub struct N2lBuffer {
    bytes: Vec<u8>,
}

/// A decoded 8-bit RGB image, rows top to bottom, pixels interleaved.
pub struct N2lImage {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct N2lEncodeParams {
    /// Complexity setting, 0 to 4.
    pub setting: u8,
    /// Bit 0: no-GPP ablation. Bit 1: single-scale noise.
    pub flags: u8,
    pub seed: u16,
    pub init_seed: u16,
    pub steps: u32,
    /// Rate-distortion weight; zero or negative selects `0.02 * H * W`.
    pub lambda: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct N2lStreamInfo {
    pub version: u8,
    pub setting: u8,
    pub flags: u8,
    pub width: u16,
    pub height: u16,
    pub seed: u16,
    pub init_seed: u16,
    pub gpp_step_exp: i8,
    pub synth_step_exp: i8,
    pub gpp_params: u32,
    pub synth_params: u32,
    pub total_bytes: u64,
    pub bpp: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> N2lStatus {
    match e.exit_code() {
        3 => N2lStatus::Malformed,
        4 => N2lStatus::Diverged,
        5 => N2lStatus::BadDimensions,
        _ => N2lStatus::BadInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (N2lStatus, String)>) -> N2lStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => N2lStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            N2lStatus::Internal
        }
    }
}

fn lib(e: Error) -> (N2lStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (N2lStatus, String) {
    (N2lStatus::InvalidArgument, msg.to_owned())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn n2l_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn n2l_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Defaults: setting 0, no flags, seeds 0, 10000 steps, default lambda.
#[no_mangle]
pub extern "C" fn n2l_encode_params_default() -> N2lEncodeParams {
    N2lEncodeParams {
        setting: 0,
        flags: 0,
        seed: 0,
        init_seed: 0,
        steps: 10_000,
        lambda: 0.0,
    }
}

/// Encodes an interleaved 8-bit RGB image of `width * height` pixels.
///
/// # Safety
/// `params` must point to a valid struct, `rgb` to `3 * width * height`
/// readable bytes, and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn n2l_encode_rgb8(
    params: *const N2lEncodeParams,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut *mut N2lBuffer,
) -> N2lStatus {
    guard(|| {
        if params.is_null() || rgb.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        *out = ptr::null_mut();
        let p = *params;
        let setting = Setting::from_id(p.setting).map_err(|e| invalid(&e.to_string()))?;
        if p.flags & !0b11 != 0 {
            return Err(invalid("unknown flag bits"));
        }
        if p.steps == 0 {
            return Err(invalid("steps must be positive"));
        }
        let (w, h) = (width as usize, height as usize);
        let len = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| invalid("image too large"))?;
        n2l::image_io::check_dims(h, w).map_err(lib)?;
        let image = rgb8_to_tensor(w, h, std::slice::from_raw_parts(rgb, len));
        let opts = EncodeOptions {
            seed: p.seed,
            lambda: (p.lambda > 0.0).then_some(p.lambda),
            no_gpp: p.flags & 1 != 0,
            single_scale: p.flags & 2 != 0,
            train: TrainConfig {
                init_seed: p.init_seed,
                ..TrainConfig::with_steps(p.steps as usize)
            },
            ..EncodeOptions::new(setting, p.steps as usize)
        };
        let enc = encode(&image, &opts, |_| {}).map_err(lib)?;
        *out = Box::into_raw(Box::new(N2lBuffer { bytes: enc.stream }));
        Ok(())
    })
}

/// # Safety
/// `buf` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn n2l_buffer_data(buf: *const N2lBuffer) -> *const u8 {
    buf.as_ref().map_or(ptr::null(), |b| b.bytes.as_ptr())
}

/// # Safety
/// `buf` must be a live handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn n2l_buffer_len(buf: *const N2lBuffer) -> usize {
    buf.as_ref().map_or(0, |b| b.bytes.len())
}

/// # Safety
/// `buf` must be a handle from this library not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn n2l_buffer_free(buf: *mut N2lBuffer) {
    if !buf.is_null() {
        drop(Box::from_raw(buf));
    }
}

/// Reads the header and group sizes of a stream.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` to a writable struct.
#[no_mangle]
pub unsafe extern "C" fn n2l_stream_info(data: *const u8, len: usize, out: *mut N2lStreamInfo) -> N2lStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let p = deserialize(std::slice::from_raw_parts(data, len)).map_err(lib)?;
        let h = p.header;
        *out = N2lStreamInfo {
            version: h.version,
            setting: h.setting_id,
            flags: h.flags,
            width: h.width,
            height: h.height,
            seed: h.seed,
            init_seed: h.init_seed,
            gpp_step_exp: h.gpp_step_exp,
            synth_step_exp: h.synth_step_exp,
            gpp_params: p.params.gpp.len() as u32,
            synth_params: p.params.synth.len() as u32,
            total_bytes: p.total_bytes() as u64,
            bpp: p.bpp(),
        };
        Ok(())
    })
}

/// Decodes a stream into an 8-bit RGB image.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` to writable storage
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn n2l_decode(data: *const u8, len: usize, out: *mut *mut N2lImage) -> N2lStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        *out = ptr::null_mut();
        let dec = decode(std::slice::from_raw_parts(data, len)).map_err(lib)?;
        let img = N2lImage {
            width: dec.parsed.header.width.into(),
            height: dec.parsed.header.height.into(),
            rgb: tensor_to_rgb8(&dec.image).map_err(lib)?,
        };
        *out = Box::into_raw(Box::new(img));
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn n2l_image_width(img: *const N2lImage) -> u32 {
    img.as_ref().map_or(0, |i| i.width)
}

/// # Safety
/// `img` must be a live handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn n2l_image_height(img: *const N2lImage) -> u32 {
    img.as_ref().map_or(0, |i| i.height)
}

/// Pointer to `3 * width * height` bytes owned by the handle.
///
/// # Safety
/// `img` must be a live handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn n2l_image_rgb8(img: *const N2lImage) -> *const u8 {
    img.as_ref().map_or(ptr::null(), |i| i.rgb.as_ptr())
}

/// # Safety
/// `img` must be a handle from this library not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn n2l_image_free(img: *mut N2lImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}
