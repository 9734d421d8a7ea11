use std::ffi::CStr;
use std::ptr;

use n2l_ffi::*;

fn last_error() -> String {
    let p = n2l_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn gradient(w: usize, h: usize) -> Vec<u8> {
    (0..h)
        .flat_map(|y| (0..w).flat_map(move |x| [(x * 255 / w) as u8, (y * 255 / h) as u8, 128]))
        .collect()
}

fn encode(rgb: &[u8], w: u32, h: u32, params: N2lEncodeParams) -> Vec<u8> {
    let mut buf = ptr::null_mut();
    let st = unsafe { n2l_encode_rgb8(&params, rgb.as_ptr(), w, h, &mut buf) };
    assert_eq!(st, N2lStatus::Ok, "{}", last_error());
    let bytes = unsafe { std::slice::from_raw_parts(n2l_buffer_data(buf), n2l_buffer_len(buf)) }.to_vec();
    unsafe { n2l_buffer_free(buf) };
    bytes
}

#[test]
fn encode_info_decode() {
    let (w, h) = (20u32, 16u32);
    let rgb = gradient(w as usize, h as usize);
    let params = N2lEncodeParams {
        steps: 20,
        seed: 77,
        ..n2l_encode_params_default()
    };
    let stream = encode(&rgb, w, h, params);
    assert_eq!(encode(&rgb, w, h, params), stream);

    let mut info = N2lStreamInfo::default();
    assert_eq!(
        unsafe { n2l_stream_info(stream.as_ptr(), stream.len(), &mut info) },
        N2lStatus::Ok
    );
    assert_eq!((info.width, info.height, info.seed), (20, 16, 77));
    assert_eq!(info.total_bytes as usize, stream.len());
    assert_eq!(info.bpp, 8.0 * stream.len() as f64 / 320.0);

    let mut img = ptr::null_mut();
    assert_eq!(
        unsafe { n2l_decode(stream.as_ptr(), stream.len(), &mut img) },
        N2lStatus::Ok
    );
    let (iw, ih) = unsafe { (n2l_image_width(img), n2l_image_height(img)) };
    assert_eq!((iw, ih), (w, h));
    let px = unsafe { std::slice::from_raw_parts(n2l_image_rgb8(img), (3 * iw * ih) as usize) };
    let d = n2l::codec::decode(&stream).unwrap();
    assert_eq!(px, n2l::image_io::tensor_to_rgb8(&d.image).unwrap());
    unsafe { n2l_image_free(img) };
}

#[test]
fn flags_reach_the_header() {
    let rgb = gradient(16, 16);
    let params = N2lEncodeParams {
        steps: 3,
        flags: 0b11,
        ..n2l_encode_params_default()
    };
    let stream = encode(&rgb, 16, 16, params);
    let mut info = N2lStreamInfo::default();
    assert_eq!(
        unsafe { n2l_stream_info(stream.as_ptr(), stream.len(), &mut info) },
        N2lStatus::Ok
    );
    assert_eq!(info.flags, 0b11);
    assert_eq!(info.gpp_params, 0);
}

#[test]
fn error_codes() {
    let rgb = gradient(16, 16);
    let mut buf = ptr::null_mut();
    let params = n2l_encode_params_default();
    assert_eq!(
        unsafe { n2l_encode_rgb8(ptr::null(), rgb.as_ptr(), 16, 16, &mut buf) },
        N2lStatus::InvalidArgument
    );
    let bad = N2lEncodeParams { setting: 9, ..params };
    assert_eq!(
        unsafe { n2l_encode_rgb8(&bad, rgb.as_ptr(), 16, 16, &mut buf) },
        N2lStatus::InvalidArgument
    );
    assert!(last_error().contains("setting"));
    let small = gradient(4, 4);
    assert_eq!(
        unsafe { n2l_encode_rgb8(&params, small.as_ptr(), 4, 4, &mut buf) },
        N2lStatus::BadDimensions
    );
    assert!(buf.is_null());

    let mut img = ptr::null_mut();
    assert_eq!(
        unsafe { n2l_decode(b"JUNK".as_ptr(), 4, &mut img) },
        N2lStatus::Malformed
    );
    assert!(img.is_null());
    assert!(last_error().contains("magic"));
    let mut info = N2lStreamInfo::default();
    assert_eq!(
        unsafe { n2l_stream_info([b'N', b'2', b'L', b'1', 1, 0].as_ptr(), 6, &mut info) },
        N2lStatus::Malformed
    );

    // a successful call clears the message
    assert_eq!(
        unsafe { n2l_stream_info(ptr::null(), 0, &mut info) },
        N2lStatus::InvalidArgument
    );
    let _ = n2l_encode_params_default();
    unsafe {
        n2l_buffer_free(ptr::null_mut());
        n2l_image_free(ptr::null_mut());
        assert_eq!(n2l_buffer_len(ptr::null()), 0);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(n2l_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/n2l.h")).unwrap();
    for name in [
        "n2l_version",
        "n2l_last_error",
        "n2l_encode_params_default",
        "n2l_encode_rgb8",
        "n2l_buffer_data",
        "n2l_buffer_len",
        "n2l_buffer_free",
        "n2l_stream_info",
        "n2l_decode",
        "n2l_image_width",
        "n2l_image_height",
        "n2l_image_rgb8",
        "n2l_image_free",
        "N2L_STATUS_MALFORMED = 3",
        "N2L_STATUS_DIVERGED = 4",
    ] {
        assert!(header.contains(name), "{name} missing from n2l.h");
    }
}

/// Compiles and runs a C program against the generated header and the
/// static library when a C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let tmp = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let profile_dir = tmp
        .parent()
        .unwrap()
        .join(if cfg!(debug_assertions) { "debug" } else { "release" });
    let lib = profile_dir.join("libn2l_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let exe = tmp.join("n2l_smoke");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let status = std::process::Command::new(cc)
        .args([
            &format!("{manifest}/tests/c/smoke.c"),
            "-I",
            &format!("{manifest}/include"),
            lib.to_str().unwrap(),
            "-lpthread",
            "-ldl",
            "-lm",
            "-o",
            exe.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke program failed: {out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            std::process::Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
