//! C interface to the humotok tokenizer.
//!
//! Every function returns a [`HumotokStatus`]; on failure the message is
//! available from [`humotok_last_error`] on the same thread. Handles are
//! opaque and released with the matching `_free` function. Buffers are
//! caller-owned: when one is too small the call returns
//! `HUMOTOK_STATUS_BUFFER_TOO_SMALL` and writes the required length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use humotok::container::{load_motion, save_motion};
use humotok::features::HUMO263_V1;
use humotok::metrics;
use humotok::prq::{load_codebook, CodebookSet};
use humotok::tokens::codec::{serialize, StreamHeader, TokenOrder};
use humotok::tokens::stream::{first_output_latency, throughput_model, StreamDecoder, StreamStatus};
use humotok::tokens::vocab::VocabMap;
use humotok::{Error, ErrorKind, MotionSequence};
use nalgebra::Vector3;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HumotokStatus {
    Ok = 0,
    NullArgument = 1,
    BufferTooSmall = 2,
    InvalidInput = 3,
    Io = 4,
    Corrupt = 5,
    Numerical = 6,
    Unsupported = 7,
    InvalidState = 8,
    Parse = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HumotokOrdering {
    FrameByFrame = 0,
    LayerByLayer = 1,
}

impl From<HumotokOrdering> for TokenOrder {
    fn from(o: HumotokOrdering) -> Self {
        match o {
            HumotokOrdering::FrameByFrame => TokenOrder::FrameByFrame,
            HumotokOrdering::LayerByLayer => TokenOrder::LayerByLayer,
        }
    }
}

/// A feature sequence (`frames x dim` values).
pub struct HumotokMotion(MotionSequence);

/// A trained or untrained codebook set.
pub struct HumotokModel(CodebookSet);

/// Incremental frame-by-frame detokenizer bound to a model.
pub struct HumotokStream {
    decoder: StreamDecoder<'static>,
    frame_dim: usize,
    downsample: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HumotokStatus {
    match e.kind() {
        ErrorKind::InvalidInput => HumotokStatus::InvalidInput,
        ErrorKind::Io => HumotokStatus::Io,
        ErrorKind::Corrupt => HumotokStatus::Corrupt,
        ErrorKind::Numerical => HumotokStatus::Numerical,
        ErrorKind::Unsupported => HumotokStatus::Unsupported,
        ErrorKind::InvalidState => HumotokStatus::InvalidState,
        ErrorKind::Parse => HumotokStatus::Parse,
    }
}

struct Failure(HumotokStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HumotokStatus::NullArgument, format!("{what} is null"))
}

/// Runs `body`, recording any error or panic as the thread's last error.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> HumotokStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => HumotokStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            HumotokStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(HumotokStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `len` readable elements.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

/// Copies `src` into a caller buffer, reporting the needed length.
unsafe fn fill<T: Copy>(src: &[T], out: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    // SAFETY: checked non-null above.
    unsafe { *out_len = src.len() };
    if src.len() > capacity || (out.is_null() && !src.is_empty()) {
        return Err(Failure(
            HumotokStatus::BufferTooSmall,
            format!("buffer holds {capacity}, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        // SAFETY: caller guarantees `capacity` writable elements.
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    }
    Ok(())
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: checked non-null; caller provides a writable slot.
    unsafe { out.write(value) };
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn humotok_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, NUL-terminated and static.
#[no_mangle]
pub extern "C" fn humotok_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_motion_load(path: *const c_char, out: *mut *mut HumotokMotion) -> HumotokStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path") }?;
        let motion = load_motion(path)?;
        unsafe { write_out(out, Box::into_raw(Box::new(HumotokMotion(motion))), "out") }
    })
}

/// Builds a motion from `frames x dim` row-major values.
///
/// # Safety
/// `data` holds `frames * dim` values; `layout` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn humotok_motion_from_data(
    data: *const f64,
    frames: usize,
    dim: usize,
    fps: f64,
    layout: *const c_char,
    out: *mut *mut HumotokMotion,
) -> HumotokStatus {
    guard(|| {
        let layout = unsafe { str_arg(layout, "layout") }?;
        let len = frames
            .checked_mul(dim)
            .ok_or_else(|| Failure(HumotokStatus::InvalidInput, "frames x dim overflows".into()))?;
        let values = unsafe { input(data, len, "data") }?.to_vec();
        let motion = MotionSequence::new(frames, dim, fps, layout, values)?;
        unsafe { write_out(out, Box::into_raw(Box::new(HumotokMotion(motion))), "out") }
    })
}

/// # Safety
/// `motion` is a live handle; `path` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn humotok_motion_save(motion: *const HumotokMotion, path: *const c_char) -> HumotokStatus {
    guard(|| {
        let m = unsafe { handle(motion, "motion") }?;
        let path = unsafe { str_arg(path, "path") }?;
        save_motion(path, &m.0)?;
        Ok(())
    })
}

/// # Safety
/// `motion` is a live handle; `frames` and `dim` are writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_motion_shape(
    motion: *const HumotokMotion,
    frames: *mut usize,
    dim: *mut usize,
) -> HumotokStatus {
    guard(|| {
        let m = unsafe { handle(motion, "motion") }?;
        unsafe { write_out(frames, m.0.frames(), "frames") }?;
        unsafe { write_out(dim, m.0.dim(), "dim") }
    })
}

/// Copies all values, row-major.
///
/// # Safety
/// `motion` is a live handle; `out` holds `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn humotok_motion_data(
    motion: *const HumotokMotion,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> HumotokStatus {
    guard(|| {
        let m = unsafe { handle(motion, "motion") }?;
        unsafe { fill(m.0.data(), out, capacity, out_len) }
    })
}

/// # Safety
/// `motion` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn humotok_motion_free(motion: *mut HumotokMotion) {
    if !motion.is_null() {
        // SAFETY: allocated by this library with Box::into_raw.
        drop(unsafe { Box::from_raw(motion) });
    }
}

/// # Safety
/// `path` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_model_load(path: *const c_char, out: *mut *mut HumotokModel) -> HumotokStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path") }?;
        let model = load_codebook(path)?;
        unsafe { write_out(out, Box::into_raw(Box::new(HumotokModel(model))), "out") }
    })
}

/// # Safety
/// `model` is NULL or a handle not yet freed, with no live stream bound to it.
#[no_mangle]
pub unsafe extern "C" fn humotok_model_free(model: *mut HumotokModel) {
    if !model.is_null() {
        // SAFETY: allocated by this library with Box::into_raw.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Token ids for `motion`, including the begin and end markers.
///
/// # Safety
/// Handles are live; `out` holds `capacity` ids; `out_len` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_tokenize(
    model: *const HumotokModel,
    motion: *const HumotokMotion,
    ordering: HumotokOrdering,
    base_offset: u32,
    out: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> HumotokStatus {
    guard(|| {
        let model = unsafe { handle(model, "model") }?;
        let motion = unsafe { handle(motion, "motion") }?;
        let cfg = model.0.config();
        let (_, grid) = model.0.encode(&motion.0)?;
        let vocab = VocabMap::new(base_offset, cfg.layers, cfg.codebook_size)?;
        let stream = serialize(&grid, ordering.into(), &vocab)?;
        unsafe { fill(&stream.tokens, out, capacity, out_len) }
    })
}

/// Opens a frame-by-frame decoder for a stream of `frames` frames.
///
/// # Safety
/// `model` is live and must outlive the stream; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_stream_new(
    model: *const HumotokModel,
    frames: usize,
    fps: f64,
    base_offset: u32,
    layers_used: usize,
    out: *mut *mut HumotokStream,
) -> HumotokStatus {
    guard(|| {
        // SAFETY: the caller keeps the model alive for the stream's lifetime.
        let model: &'static HumotokModel = unsafe { handle(model, "model") }?;
        let cfg = model.0.config();
        let header = StreamHeader {
            frames,
            downsample: cfg.downsample,
            parts: model.0.parts(),
            layers: cfg.layers,
            codebook_size: cfg.codebook_size,
            fps,
            layout: HUMO263_V1.into(),
            ordering: TokenOrder::FrameByFrame,
            base_offset,
        };
        if frames == 0 {
            return Err(Failure(HumotokStatus::InvalidInput, "stream needs at least one frame".into()));
        }
        let decoder = StreamDecoder::new(&model.0, header, layers_used)?;
        let stream = HumotokStream {
            decoder,
            frame_dim: humotok::HUMO263_DIM,
            downsample: cfg.downsample,
        };
        unsafe { write_out(out, Box::into_raw(Box::new(stream)), "out") }
    })
}

/// Feeds one token id. Completed frames are written row-major to `out`;
/// `out_frames` receives their count. `out` must hold
/// `humotok_stream_max_values` values; the token is not consumed otherwise.
///
/// # Safety
/// `stream` is live; `out` holds `capacity` values; `out_frames` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_stream_push(
    stream: *mut HumotokStream,
    token: u32,
    out: *mut f64,
    capacity: usize,
    out_frames: *mut usize,
) -> HumotokStatus {
    guard(|| {
        // SAFETY: non-null handles come from humotok_stream_new.
        let s = unsafe { stream.as_mut() }.ok_or_else(|| null("stream"))?;
        unsafe { write_out(out_frames, 0, "out_frames") }?;
        let need = s.downsample * s.frame_dim;
        if capacity < need || out.is_null() {
            return Err(Failure(
                HumotokStatus::BufferTooSmall,
                format!("buffer holds {capacity}, {need} needed"),
            ));
        }
        let frames = s.decoder.push(token)?;
        let flat: Vec<f64> = frames.concat();
        let mut written = 0;
        unsafe { fill(&flat, out, capacity, &mut written) }?;
        unsafe { write_out(out_frames, frames.len(), "out_frames") }
    })
}

/// Values per decoded frame.
///
/// # Safety
/// `stream` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn humotok_stream_frame_dim(stream: *const HumotokStream) -> usize {
    // SAFETY: caller passes a live handle or NULL.
    unsafe { stream.as_ref() }.map_or(0, |s| s.frame_dim)
}

/// Largest number of values one push can produce.
///
/// # Safety
/// `stream` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn humotok_stream_max_values(stream: *const HumotokStream) -> usize {
    // SAFETY: caller passes a live handle or NULL.
    unsafe { stream.as_ref() }.map_or(0, |s| s.downsample * s.frame_dim)
}

/// Sets `complete` to 1 once the end marker was read; `frames` receives
/// the frames emitted so far.
///
/// # Safety
/// `stream` is live; output pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_stream_finish(
    stream: *const HumotokStream,
    complete: *mut i32,
    frames: *mut usize,
) -> HumotokStatus {
    guard(|| {
        let s = unsafe { handle(stream, "stream") }?;
        let (done, n) = match s.decoder.finish() {
            StreamStatus::Complete { frames } => (1, frames),
            StreamStatus::EndOfInput { frames, .. } => (0, frames),
        };
        unsafe { write_out(complete, done, "complete") }?;
        unsafe { write_out(frames, n, "frames") }
    })
}

/// # Safety
/// `stream` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn humotok_stream_free(stream: *mut HumotokStream) {
    if !stream.is_null() {
        // SAFETY: allocated by this library with Box::into_raw.
        drop(unsafe { Box::from_raw(stream) });
    }
}

/// Frames per second sustained by `token_rate` tokens per second.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_throughput_fps(
    token_rate: f64,
    downsample: usize,
    parts: usize,
    layers: usize,
    out: *mut f64,
) -> HumotokStatus {
    guard(|| {
        let fps = throughput_model(token_rate, downsample, parts, layers)?;
        unsafe { write_out(out, fps, "out") }
    })
}

/// Code tokens read before the first frame can be emitted.
#[no_mangle]
pub extern "C" fn humotok_first_output_latency(
    ordering: HumotokOrdering,
    steps: usize,
    parts: usize,
    layers: usize,
) -> usize {
    if steps == 0 || parts == 0 || layers == 0 {
        return 0;
    }
    first_output_latency(ordering.into(), steps, parts, layers)
}

/// MPJPE in millimeters over `frames x joints` positions in meters,
/// stored as consecutive xyz triples.
///
/// # Safety
/// `pred` and `gt` hold `frames * joints * 3` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_mpjpe(
    pred: *const f64,
    gt: *const f64,
    frames: usize,
    joints: usize,
    out: *mut f64,
) -> HumotokStatus {
    guard(|| {
        let len = frames * joints * 3;
        let tracks = |v: &[f64]| -> Vec<Vec<Vector3<f64>>> {
            v.chunks_exact(joints * 3)
                .map(|f| f.chunks_exact(3).map(Vector3::from_column_slice).collect())
                .collect()
        };
        if joints == 0 {
            return Err(Failure(HumotokStatus::InvalidInput, "joints must be positive".into()));
        }
        let p = tracks(unsafe { input(pred, len, "pred") }?);
        let g = tracks(unsafe { input(gt, len, "gt") }?);
        let v = metrics::mpjpe(&p, &g)?;
        unsafe { write_out(out, v, "out") }
    })
}

/// Fréchet distance between two row sets of width `dim`.
///
/// # Safety
/// `a` holds `rows_a * dim` values, `b` holds `rows_b * dim`; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn humotok_frechet(
    a: *const f64,
    rows_a: usize,
    b: *const f64,
    rows_b: usize,
    dim: usize,
    out: *mut f64,
) -> HumotokStatus {
    guard(|| {
        if dim == 0 {
            return Err(Failure(HumotokStatus::InvalidInput, "dim must be positive".into()));
        }
        let rows = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks_exact(dim).map(<[f64]>::to_vec).collect() };
        let set_a = rows(unsafe { input(a, rows_a * dim, "a") }?);
        let set_b = rows(unsafe { input(b, rows_b * dim, "b") }?);
        let v = metrics::frechet_distance(&set_a, &set_b)?;
        unsafe { write_out(out, v, "out") }
    })
}
