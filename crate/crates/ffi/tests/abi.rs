use std::ffi::{CStr, CString};
use std::ptr;

use crds_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(crds_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn gradient_clip(frames: usize, h: usize, w: usize) -> Vec<u8> {
    (0..frames * h * w)
        .map(|i| {
            let (t, p) = (i / (h * w), i % (h * w));
            ((p / w) * 5 + (p % w + t) * 3) as u8
        })
        .collect()
}

#[test]
fn codec_and_identity_model_round_trip() {
    let (f, h, w) = (3, 16, 16);
    let data = gradient_clip(f, h, w);
    unsafe {
        let mut gt = ptr::null_mut();
        assert_eq!(crds_clip_from_u8(data.as_ptr(), f, 1, h, w, &mut gt), CrdsStatus::Ok);
        let mut info = CrdsClipInfo::default();
        assert_eq!(crds_clip_info(gt, &mut info), CrdsStatus::Ok);
        assert_eq!((info.frames, info.channels, info.height, info.width), (f, 1, h, w));

        let (mut lq, mut meta) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(crds_codec_encode(gt, 37, 0, 0, &mut lq, &mut meta), CrdsStatus::Ok);
        let mut stats = CrdsNoiseStats::default();
        assert_eq!(crds_meta_noise_stats(meta, &mut stats), CrdsStatus::Ok);
        assert!(stats.count > 0);
        assert!(stats.max_abs <= stats.qstep / 2.0 + 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let mp = cstr(&dir.path().join("meta.json"));
        assert_eq!(crds_meta_save(meta, mp.as_ptr()), CrdsStatus::Ok);
        let mut meta2 = ptr::null_mut();
        assert_eq!(crds_meta_load(mp.as_ptr(), &mut meta2), CrdsStatus::Ok);

        let cp = cstr(&dir.path().join("lq.craw"));
        assert_eq!(crds_clip_save(lq, cp.as_ptr()), CrdsStatus::Ok);
        let mut lq2 = ptr::null_mut();
        assert_eq!(crds_clip_load(cp.as_ptr(), &mut lq2), CrdsStatus::Ok);

        let preset = CString::new("tiny").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(crds_model_new(preset.as_ptr(), &mut model), CrdsStatus::Ok);
        let mut enh = ptr::null_mut();
        assert_eq!(crds_model_enhance(model, lq2, &mut enh), CrdsStatus::Ok);
        let (mut a, mut b) = (vec![0u8; h * w], vec![0u8; h * w]);
        for i in 0..f {
            assert_eq!(crds_clip_frame(enh, i, a.as_mut_ptr(), a.len()), CrdsStatus::Ok);
            assert_eq!(crds_clip_frame(lq, i, b.as_mut_ptr(), b.len()), CrdsStatus::Ok);
            assert_eq!(a, b);
        }
        let (mut dp, mut ds) = (f64::NAN, f64::NAN);
        assert_eq!(crds_delta_metrics(enh, lq, gt, &mut dp, &mut ds), CrdsStatus::Ok);
        assert_eq!((dp, ds), (0.0, 0.0));

        for c in [gt, lq, lq2, enh] {
            crds_clip_free(c);
        }
        crds_meta_free(meta);
        crds_meta_free(meta2);
        crds_model_free(model);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut clip = ptr::null_mut();
        let p = CString::new("/definitely/not/here.craw").unwrap();
        assert_eq!(crds_clip_load(p.as_ptr(), &mut clip), CrdsStatus::Io);
        assert!(clip.is_null());
        assert!(last_error().contains("not/here"));

        assert_eq!(crds_clip_load(ptr::null(), &mut clip), CrdsStatus::NullPointer);
        let data = [0u8; 8];
        assert_eq!(
            crds_clip_from_u8(data.as_ptr(), 1, 2, 2, 2, &mut clip),
            CrdsStatus::InvalidInput
        );

        let mut ok = ptr::null_mut();
        assert_eq!(crds_clip_from_u8(data.as_ptr(), 2, 1, 2, 2, &mut ok), CrdsStatus::Ok);
        assert_eq!(last_error(), "");
        let mut small = [0u8; 2];
        assert_eq!(
            crds_clip_frame(ok, 0, small.as_mut_ptr(), small.len()),
            CrdsStatus::InvalidInput
        );
        assert_eq!(crds_clip_frame(ok, 5, small.as_mut_ptr(), 4), CrdsStatus::InvalidInput);
        crds_clip_free(ok);
        crds_clip_free(ptr::null_mut());

        let bad = CString::new("huge").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(crds_model_new(bad.as_ptr(), &mut model), CrdsStatus::InvalidInput);
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(crds_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crds.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "crds_clip_load",
        "crds_codec_encode",
        "crds_model_enhance",
        "crds_last_error",
        "typedef struct CrdsModel CrdsModel",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
