use std::ffi::{CStr, CString};
use std::ptr;

use adars_ffi::*;

fn last_error() -> String {
    let p = adars_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const SMALL: &str = "seed = 5\n[experiment]\ntrain_tasks = 60\neval_tasks = 30\neval_mode = \"exact\"\n[dpo]\nsteps = 40\n[dapo]\nsteps = 20\n[base]\nsteps = 40\n";

#[test]
fn scalar_functions_match_the_library() {
    let mut r = 0.0;
    assert_eq!(unsafe { adars_alp_reward(true, 4, 0.5, 0.1, &mut r) }, AdarsStatus::Ok);
    assert_eq!(r, adars::rewards::alp_reward(true, 4, 0.5, 0.1));

    let text = CString::new("First step. Second step! Third?").unwrap();
    let mut n = 0usize;
    assert_eq!(unsafe { adars_count_think_sentences(text.as_ptr(), &mut n) }, AdarsStatus::Ok);
    assert_eq!(n, adars::rewards::count_think_sentences("First step. Second step! Third?"));

    let mut p = 0.0;
    assert_eq!(unsafe { adars_pairwise_accept_prob(0.3, 0.5, 0.1, &mut p) }, AdarsStatus::Ok);
    assert!((p - (-2.0f64).exp()).abs() < 1e-12);

    let rewards = [1.0, 0.0, 0.5, 0.9];
    let mut probs = [0.0; 4];
    let s = unsafe { adars_groupwise_accept_probs(rewards.as_ptr(), 4, 0.5, AdarsZeroSigma::AcceptAll, probs.as_mut_ptr()) };
    assert_eq!(s, AdarsStatus::Ok);
    let expected =
        adars::sampler::groupwise_accept_probs(&rewards, 0.5, adars::sampler::ZeroSigmaPolicy::AcceptAll).unwrap();
    assert_eq!(probs.to_vec(), expected);
}

#[test]
fn errors_set_status_and_message() {
    let mut p = 0.0;
    assert_eq!(unsafe { adars_pairwise_accept_prob(0.3, 0.5, 0.0, &mut p) }, AdarsStatus::InvalidArgument);
    assert!(last_error().contains("beta_rs"), "{}", last_error());
    assert_eq!(p, 0.0, "outputs are untouched on failure");

    assert_eq!(unsafe { adars_alp_reward(true, 1, 0.5, 0.1, ptr::null_mut()) }, AdarsStatus::NullPointer);
    assert_eq!(unsafe { adars_alp_reward(true, 1, 1.5, 0.1, &mut p) }, AdarsStatus::InvalidArgument);
    assert_eq!(unsafe { adars_count_think_sentences(ptr::null(), ptr::null_mut()) }, AdarsStatus::NullPointer);

    let bad = [0xffu8, 0xfe, 0];
    let mut n = 0usize;
    assert_eq!(unsafe { adars_count_think_sentences(bad.as_ptr().cast(), &mut n) }, AdarsStatus::InvalidUtf8);

    let cfg = CString::new("[reward]\nbogus = 1\n").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { adars_pipeline_new(cfg.as_ptr(), &mut h) }, AdarsStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(last_error().contains("bogus"));
}

#[test]
fn errors_are_thread_local() {
    let mut p = 0.0;
    unsafe { adars_pairwise_accept_prob(0.3, 0.5, -1.0, &mut p) };
    let other = std::thread::spawn(|| adars_last_error_message().is_null()).join().unwrap();
    assert!(other);
    assert!(!adars_last_error_message().is_null());
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(adars_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn pipeline_handle_filters_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("rollouts.jsonl");
    let mut lines = String::new();
    for ctx in 0..3 {
        for i in 0..4 {
            let think = "Step one. ".repeat(i);
            lines += &format!(
                "{{\"context_id\":\"c{ctx}\",\"think_text\":\"{think}\",\"call\":{{\"name\":\"t\",\"args\":{{}}}},\"correct\":{}}}\n",
                i % 2 == 0
            );
        }
    }
    std::fs::write(&input, lines).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { adars_pipeline_new(ptr::null(), &mut h) }, AdarsStatus::Ok);
    assert_eq!(unsafe { adars_pipeline_set(h, 0.05, 1.0, 7) }, AdarsStatus::Ok);
    assert_eq!(unsafe { adars_pipeline_set(h, 0.05, 0.0, 7) }, AdarsStatus::InvalidArgument);

    let in_c = CString::new(input.to_str().unwrap()).unwrap();
    for (mode, name) in [(AdarsFilterMode::Pairs, "pairs.jsonl"), (AdarsFilterMode::Group, "group.jsonl")] {
        let out = dir.path().join(name);
        let out_c = CString::new(out.to_str().unwrap()).unwrap();
        let mut stats = AdarsPipelineStats::default();
        let s = unsafe { adars_pipeline_run(h, mode, in_c.as_ptr(), out_c.as_ptr(), &mut stats) };
        assert_eq!(s, AdarsStatus::Ok, "{}", last_error());
        assert_eq!(stats.contexts, 3);
        assert_eq!(stats.candidates, 12);
        assert!(stats.accepted <= stats.considered);
        let written = std::fs::read_to_string(&out).unwrap();
        assert_eq!(written.lines().count(), if mode == AdarsFilterMode::Group { 3 } else { stats.accepted });
        assert!(adars::pipeline::stats_path_for(&out).exists());
    }

    let missing = CString::new(dir.path().join("nope.jsonl").to_str().unwrap()).unwrap();
    let out_c = CString::new(dir.path().join("x.jsonl").to_str().unwrap()).unwrap();
    let s = unsafe { adars_pipeline_run(h, AdarsFilterMode::Pairs, missing.as_ptr(), out_c.as_ptr(), ptr::null_mut()) };
    assert_eq!(s, AdarsStatus::Io);
    unsafe { adars_pipeline_free(h) };
    unsafe { adars_pipeline_free(ptr::null_mut()) };
}

#[test]
fn policy_handles_train_save_load_and_evaluate() {
    let cfg = CString::new(SMALL).unwrap();
    let mut base = ptr::null_mut();
    assert_eq!(unsafe { adars_policy_base(cfg.as_ptr(), &mut base) }, AdarsStatus::Ok, "{}", last_error());

    let mut on = AdarsEvalSummary::default();
    let mut off = AdarsEvalSummary::default();
    assert_eq!(unsafe { adars_policy_evaluate(base, 30, AdarsGate::ThinkOn, &mut on) }, AdarsStatus::Ok);
    assert_eq!(unsafe { adars_policy_evaluate(base, 30, AdarsGate::ThinkOff, &mut off) }, AdarsStatus::Ok);
    assert_eq!(on.tasks, 30);
    assert!((on.thinking_rate - 1.0).abs() < 1e-12);
    assert!(off.thinking_rate.abs() < 1e-12);
    assert!(on.avg_output_tokens > off.avg_output_tokens);
    assert_eq!(unsafe { adars_policy_evaluate(base, 0, AdarsGate::Free, &mut on) }, AdarsStatus::InvalidArgument);

    let mut trained = ptr::null_mut();
    let s = unsafe { adars_policy_train(cfg.as_ptr(), AdarsMethod::AdaRsDpo, &mut trained) };
    assert_eq!(s, AdarsStatus::Ok, "{}", last_error());
    let mut before = AdarsEvalSummary::default();
    assert_eq!(unsafe { adars_policy_evaluate(trained, 30, AdarsGate::Free, &mut before) }, AdarsStatus::Ok);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("p.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { adars_policy_save(trained, path.as_ptr()) }, AdarsStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { adars_policy_load(path.as_ptr(), cfg.as_ptr(), &mut loaded) }, AdarsStatus::Ok, "{}", last_error());
    let mut after = AdarsEvalSummary::default();
    assert_eq!(unsafe { adars_policy_evaluate(loaded, 30, AdarsGate::Free, &mut after) }, AdarsStatus::Ok);
    assert_eq!(before, after);

    // A checkpoint for a different world shape is rejected, not mis-read.
    std::fs::write(dir.path().join("bad.json"), "{\"shape\":{\"features\":1,\"max_think\":1,\"tools\":1},\"gate\":[0],\"length\":[[0]],\"answer\":[[0]]}").unwrap();
    let bad = CString::new(dir.path().join("bad.json").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { adars_policy_load(bad.as_ptr(), ptr::null(), &mut h) }, AdarsStatus::InvalidArgument);
    assert!(h.is_null());

    unsafe {
        adars_policy_free(base);
        adars_policy_free(trained);
        adars_policy_free(loaded);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/adars.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let mut n = 0;
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from header");
            n += 1;
        }
    }
    assert!(n >= 14);
    for ty in ["AdarsStatus", "AdarsPipeline", "AdarsPolicy", "AdarsEvalSummary", "AdarsPipelineStats"] {
        assert!(header.contains(ty));
    }
}

#[test]
fn c_consumer_compiles_against_the_header() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/abi-* -> target/<profile>
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libadars_ffi.so").exists() {
        eprintln!("shared library not found in {}; skipping", lib_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = std::process::Command::new(cc)
        .args(["-Wall", "-Wextra", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("examples/smoke.c"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-ladars_ffi", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{:?}", out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("reward=0.8000"), "{stdout}");
    assert!(stdout.contains("beta_rs"), "{stdout}");
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
