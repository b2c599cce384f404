use std::ffi::{c_char, CStr, CString};
use std::ptr;

use xfernas_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        xfn_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn sample(seed: u64, blocks: usize) -> *mut XfnGenome {
    let mut g = ptr::null_mut();
    assert_eq!(
        unsafe { xfn_genome_sample(seed, blocks, &mut g) },
        XfnStatus::Ok
    );
    g
}

#[test]
fn genome_json_round_trip_preserves_fingerprint() {
    unsafe {
        let g = sample(7, 5);
        let mut json = ptr::null_mut();
        assert_eq!(xfn_genome_to_json(g, &mut json), XfnStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(xfn_genome_from_json(json, &mut back), XfnStatus::Ok);
        let mut a = [0 as c_char; 33];
        let mut b = [0 as c_char; 33];
        assert_eq!(xfn_genome_fingerprint(g, a.as_mut_ptr(), 33), XfnStatus::Ok);
        assert_eq!(
            xfn_genome_fingerprint(back, b.as_mut_ptr(), 33),
            XfnStatus::Ok
        );
        assert_eq!(CStr::from_ptr(a.as_ptr()), CStr::from_ptr(b.as_ptr()));
        assert_eq!(CStr::from_ptr(a.as_ptr()).to_bytes().len(), 32);
        assert_eq!(xfn_genome_blocks(back), 5);
        xfn_string_free(json);
        xfn_genome_free(g);
        xfn_genome_free(back);
    }
}

#[test]
fn tokens_report_length_and_reject_small_buffers() {
    unsafe {
        let g = sample(1, 5);
        let mut len = 0;
        let mut small = [0u32; 4];
        assert_eq!(
            xfn_genome_tokens(g, small.as_mut_ptr(), small.len(), &mut len),
            XfnStatus::BufferTooSmall
        );
        assert_eq!(len, 40);
        let mut buf = [0u32; 40];
        assert_eq!(
            xfn_genome_tokens(g, buf.as_mut_ptr(), buf.len(), &mut len),
            XfnStatus::Ok
        );
        assert!(buf.iter().all(|&t| t < 25));
        xfn_genome_free(g);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let bad = CString::new("{not json").unwrap();
        let mut g = ptr::null_mut();
        assert_eq!(
            xfn_genome_from_json(bad.as_ptr(), &mut g),
            XfnStatus::Format
        );
        assert!(g.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(
            xfn_genome_from_json(ptr::null(), &mut g),
            XfnStatus::NullPointer
        );
        assert!(last_error().contains("json"));

        let mut s = ptr::null_mut();
        assert_eq!(xfn_suite_new(42, 5, 0.3, 0.01, 5, &mut s), XfnStatus::Ok);
        let genome = sample(0, 5);
        let task = CString::new("nope").unwrap();
        let mut score = 0.0;
        assert_eq!(
            xfn_suite_evaluate(s, task.as_ptr(), genome, &mut score),
            XfnStatus::UnknownTask
        );
        assert!(last_error().contains("nope"));

        let task = CString::new("task_4").unwrap();
        assert_eq!(
            xfn_suite_evaluate(s, task.as_ptr(), genome, &mut score),
            XfnStatus::Ok
        );
        assert!((0.0..=1.0).contains(&score));
        assert_eq!(xfn_last_error_message(ptr::null_mut(), 0), 0);
        xfn_genome_free(genome);
        xfn_suite_free(s);
    }
}

#[test]
fn last_error_truncates_to_the_buffer() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(
            xfn_genome_from_json(ptr::null(), &mut g),
            XfnStatus::NullPointer
        );
        let mut buf = [1 as c_char; 4];
        let n = xfn_last_error_message(buf.as_mut_ptr(), buf.len());
        assert!(n > 3);
        assert_eq!(buf[3], 0);
    }
}

#[test]
fn train_predict_save_load_and_reconstruct() {
    unsafe {
        let mut suite = ptr::null_mut();
        assert_eq!(
            xfn_suite_new(42, 3, 0.3, 0.01, 2, &mut suite),
            XfnStatus::Ok
        );
        assert_eq!(xfn_suite_num_tasks(suite), 3);
        let mut hist = ptr::null_mut();
        assert_eq!(
            xfn_suite_build_knowledge(suite, 4, 0, &mut hist),
            XfnStatus::Ok
        );
        assert_eq!(xfn_history_len(hist), 8);

        let mut cfg = xfn_train_config_default();
        assert_eq!(cfg.max_steps, -1);
        cfg.max_steps = 3;
        let mut model = ptr::null_mut();
        assert_eq!(xfn_model_train(hist, &cfg, &mut model), XfnStatus::Ok);

        let g = sample(3, 2);
        let target = CString::new("task_2").unwrap();
        let (mut u, mut t) = (0.0, 1.0);
        assert_eq!(
            xfn_model_predict(model, g, ptr::null(), &mut u),
            XfnStatus::Ok
        );
        assert_eq!(
            xfn_model_predict(model, g, target.as_ptr(), &mut t),
            XfnStatus::Ok
        );
        assert_eq!(u, t, "target head starts as the universal head");

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(xfn_model_save(model, path.as_ptr()), XfnStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(xfn_model_load(path.as_ptr(), &mut loaded), XfnStatus::Ok);
        let mut u2 = 0.0;
        assert_eq!(
            xfn_model_predict(loaded, g, ptr::null(), &mut u2),
            XfnStatus::Ok
        );
        assert_eq!(u, u2);

        let mut rec = ptr::null_mut();
        assert_eq!(xfn_model_reconstruct(model, g, &mut rec), XfnStatus::Ok);
        assert_eq!(xfn_genome_blocks(rec), 2);

        let wrong = sample(3, 5);
        assert_eq!(
            xfn_model_predict(model, wrong, ptr::null(), &mut u),
            XfnStatus::InvalidArgument
        );

        let hpath = CString::new(dir.path().join("h.jsonl").to_str().unwrap()).unwrap();
        assert_eq!(xfn_history_save(hist, hpath.as_ptr()), XfnStatus::Ok);
        let mut h2 = ptr::null_mut();
        assert_eq!(xfn_history_load(hpath.as_ptr(), &mut h2), XfnStatus::Ok);
        assert_eq!(xfn_history_len(h2), 8);

        for g in [g, wrong, rec] {
            xfn_genome_free(g);
        }
        xfn_model_free(model);
        xfn_model_free(loaded);
        xfn_history_free(hist);
        xfn_history_free(h2);
        xfn_suite_free(suite);
    }
}

#[test]
fn search_respects_budget_with_and_without_source() {
    unsafe {
        let mut suite = ptr::null_mut();
        assert_eq!(
            xfn_suite_new(42, 3, 0.3, 0.01, 2, &mut suite),
            XfnStatus::Ok
        );
        let mut hist = ptr::null_mut();
        assert_eq!(
            xfn_suite_build_knowledge(suite, 3, 0, &mut hist),
            XfnStatus::Ok
        );
        let mut cfg = xfn_search_config_default();
        assert_eq!((cfg.budget, cfg.rounds, cfg.starts_per_round), (33, 3, 11));
        cfg.budget = 4;
        cfg.rounds = 2;
        cfg.starts_per_round = 2;
        cfg.train.max_steps = 1;
        for source in [hist as *const XfnHistory, ptr::null()] {
            let mut json = ptr::null_mut();
            let mut best = 0.0;
            assert_eq!(
                xfn_search(suite, source, &cfg, &mut json, &mut best),
                XfnStatus::Ok,
                "{}",
                last_error()
            );
            let text = CStr::from_ptr(json).to_str().unwrap();
            assert!(text.contains("\"oracle_calls\": 4"), "{text}");
            assert!((0.0..=1.0).contains(&best));
            xfn_string_free(json);
        }
        cfg.budget = 0;
        let mut json = ptr::null_mut();
        assert_eq!(
            xfn_search(suite, hist, &cfg, &mut json, ptr::null_mut()),
            XfnStatus::InvalidConfig
        );
        xfn_history_free(hist);
        xfn_suite_free(suite);
    }
}

#[test]
fn version_and_null_handles_are_safe() {
    unsafe {
        let v = CStr::from_ptr(xfn_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
        assert_eq!(xfn_history_len(ptr::null()), 0);
        assert_eq!(xfn_genome_blocks(ptr::null()), 0);
        xfn_genome_free(ptr::null_mut());
        xfn_model_free(ptr::null_mut());
        xfn_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/xfernas.h")).unwrap();
    for name in [
        "XfnStatus",
        "XFN_STATUS_OK",
        "typedef struct XfnModel XfnModel",
        "xfn_last_error_message",
        "xfn_model_train",
        "xfn_search",
        "XfnSearchConfig",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let mut build = std::process::Command::new(cargo);
    build.args(["build", "--quiet", "-p", "xfernas-ffi", "--lib"]);
    if profile_dir.file_name().is_some_and(|n| n == "release") {
        build.arg("--release");
    }
    assert!(
        build.status().unwrap().success(),
        "building the static library failed"
    );
    let lib = profile_dir.join("libxfernas_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let status = std::process::Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("examples/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = std::process::Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{run:?}");
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("unknown task `missing`"), "{stdout}");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
        {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
