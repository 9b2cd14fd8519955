use std::fs;
use std::path::Path;
use std::process::Command;

use boldkit::volume_io::{read_nifti, Mask3D};
use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn boldkit(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_boldkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Run {
    let r = boldkit(dir, args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r
}

const FAST: &str = "[preprocess]\nslice_timing = false\nmotion_correction = false\n";

#[test]
fn version_prints_package_version() {
    let d = tempfile::tempdir().unwrap();
    let r = ok(d.path(), &["version"]);
    assert_eq!(r.stdout.trim(), format!("boldkit {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let d = tempfile::tempdir().unwrap();
    let cases = [
        ("[phantom]\ncnr = 1.0\nbogus = 3\n", "bogus"),
        ("[phantom]\nar1_rho = 2.0\n", "phantom.ar1_rho"),
        ("[phantom]\n[inference]\nq = 0.0\n", "inference.q"),
        ("[phantom]\n[input]\nfiles = [\"x.nii\"]\n", "mutually exclusive"),
        ("seed = 1\n", "no input"),
    ];
    for (text, key) in cases {
        fs::write(d.path().join("c.toml"), text).unwrap();
        let r = boldkit(d.path(), &["analyze", "--config", "c.toml", "--out", "o"]);
        assert_eq!(r.code, 2, "{text}: {}", r.stderr);
        assert!(r.stderr.contains(key), "{text}: {}", r.stderr);
        assert!(!d.path().join("o").exists());
    }
    let r = boldkit(d.path(), &["analyze", "--connectivity", "7"]);
    assert_eq!(r.code, 2);
}

#[test]
fn missing_input_is_a_data_error_and_leaves_no_output() {
    let d = tempfile::tempdir().unwrap();
    let r = boldkit(d.path(), &["analyze", "--input", "absent.nii.gz", "--out", "o"]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(!d.path().join("o").exists());
}

#[test]
fn numeric_failure_exits_4_and_removes_partial_outputs() {
    let d = tempfile::tempdir().unwrap();
    // a cutoff this close to Nyquist leaves no residual degrees of freedom
    fs::write(d.path().join("c.toml"), format!("[phantom]\nn_runs = 1\n{FAST}")).unwrap();
    let r = boldkit(d.path(), &["analyze", "--config", "c.toml", "--out", "o", "--cutoff-hz", "0.166"]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(!d.path().join("o").exists());
}

#[test]
fn simulate_is_deterministic_and_reports_acquisition() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--seed", "5", "--out", "a"]);
    ok(d.path(), &["simulate", "--seed", "5", "--out", "b"]);
    for f in ["run-1.nii.gz", "run-2.nii.gz", "truth.json", "manifest.json"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let v = read_nifti(d.path().join("a/run-1.nii.gz")).unwrap();
    assert_eq!(v.nt(), 100);
    assert_eq!(v.tr(), 3.0);
    ok(d.path(), &["simulate", "--seed", "6", "--out", "c"]);
    assert_ne!(
        fs::read(d.path().join("a/run-1.nii.gz")).unwrap(),
        fs::read(d.path().join("c/run-1.nii.gz")).unwrap()
    );
}

#[test]
fn analyze_finds_the_phantom_activation() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--seed", "21", "--out", "sim"]);
    fs::write(d.path().join("c.toml"), format!("[input]\ntruth = \"sim/truth.json\"\n{FAST}")).unwrap();
    let r = ok(d.path(), &["analyze", "--config", "c.toml", "--out", "a"]);
    let out = d.path().join("a");
    for f in ["t.nii.gz", "z.nii.gz", "p_adjusted.nii.gz", "rejected.nii.gz", "clusters.csv", "clusters.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let truth: Value = serde_json::from_slice(&fs::read(d.path().join("sim/truth.json")).unwrap()).unwrap();
    let rejected = Mask3D::from_volume(&read_nifti(out.join("rejected.nii.gz")).unwrap());
    let mut hits = 0;
    let mut truth_n = 0;
    for roi in truth["rois"].as_array().unwrap() {
        for v in roi["voxels"].as_array().unwrap() {
            truth_n += 1;
            hits += usize::from(rejected.contains(v.as_u64().unwrap() as usize));
        }
    }
    let dice = 2.0 * hits as f64 / (truth_n + rejected.count()) as f64;
    assert!(dice >= 0.4, "dice {dice}");
    assert!(r.stdout.contains("dice vs truth"));
    let clusters: Value = serde_json::from_slice(&fs::read(out.join("clusters.json")).unwrap()).unwrap();
    assert!(!clusters.as_array().unwrap().is_empty());
}

#[test]
fn null_phantom_mostly_yields_empty_cluster_tables() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("c.toml"),
        "[phantom]\ncnr = 0.0\nar1_rho = 0.0\nn_runs = 1\n[preprocess]\nslice_timing = false\n\
         motion_correction = false\nfwhm_mm = 0.0\n",
    )
    .unwrap();
    let mut empty = 0;
    for seed in 0..10 {
        let out = format!("o{seed}");
        ok(d.path(), &["analyze", "--config", "c.toml", "--seed", &seed.to_string(), "--out", &out]);
        let csv = fs::read_to_string(d.path().join(out).join("clusters.csv")).unwrap();
        empty += usize::from(csv.lines().count() == 1);
    }
    assert!(empty >= 8, "{empty}/10 empty");
}

#[test]
fn manifest_reruns_the_same_analysis() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--seed", "2", "--out", "sim"]);
    fs::write(d.path().join("c.toml"), format!("[input]\ntruth = \"sim/truth.json\"\n{FAST}")).unwrap();
    ok(d.path(), &["analyze", "--config", "c.toml", "--out", "a", "--q", "0.01", "--connectivity", "6"]);
    ok(d.path(), &["analyze", "--config", "a/manifest.json", "--out", "b"]);
    for f in ["clusters.csv", "clusters.json", "manifest.json", "t.nii.gz"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let m: Value = serde_json::from_slice(&fs::read(d.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["inference"]["q"], 0.01);
    assert_eq!(m["resolved"]["analysis"]["connectivity"], "Six");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["seed"], 0);
}

#[test]
fn duration_study_report_schema_and_direction() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.toml"), format!("seed = 3\n[phantom]\n{FAST}")).unwrap();
    ok(d.path(), &["duration-study", "--config", "c.toml", "--out", "ds"]);
    let out = d.path().join("ds");
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), boldkit::duration::COMPARISON_CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 3 * 4);

    let r: Value = serde_json::from_slice(&fs::read(out.join("robustness.json")).unwrap()).unwrap();
    assert_eq!(r["metric_map"], "t");
    assert_eq!(r["lsd_radius_vox"], 1);
    let conds = r["conditions"].as_array().unwrap();
    let names: Vec<&str> = conds.iter().map(|c| c["condition"].as_str().unwrap()).collect();
    assert_eq!(names, ["single", "concatenated", "averaged"]);
    for c in conds {
        for key in ["n_vols", "dof"] {
            assert!(c[key].is_u64(), "{key}");
        }
        let rois = c["rois"].as_array().unwrap();
        let roi_names: Vec<&str> = rois.iter().map(|r| r["roi"].as_str().unwrap()).collect();
        assert_eq!(roi_names, ["motor", "nontarget-1", "nontarget-2", "nontarget-3"]);
        for roi in rois {
            for key in ["lsd", "tv", "peak_r", "mean_t"] {
                assert!(roi[key].is_f64(), "{key}");
            }
        }
    }
    assert_eq!(conds[1]["n_vols"], 200);
    let peak = |i: usize| conds[i]["rois"][0]["peak_r"].as_f64().unwrap();
    assert!(peak(2) > peak(0), "averaged {} vs single {}", peak(2), peak(0));
}

#[test]
fn duplicated_run_averages_to_the_single_run() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--seed", "8", "--out", "sim"]);
    fs::write(
        d.path().join("c.toml"),
        format!("[input]\nfiles = [\"sim/run-1.nii.gz\", \"sim/run-1.nii.gz\"]\ntruth = \"sim/truth.json\"\n{FAST}"),
    )
    .unwrap();
    ok(d.path(), &["duration-study", "--config", "c.toml", "--out", "ds"]);
    let out = d.path().join("ds");
    assert_eq!(
        fs::read(out.join("t_single.nii.gz")).unwrap(),
        fs::read(out.join("t_averaged.nii.gz")).unwrap()
    );
    let r: Value = serde_json::from_slice(&fs::read(out.join("robustness.json")).unwrap()).unwrap();
    assert_eq!(r["conditions"][0]["rois"], r["conditions"][2]["rois"]);
}

#[test]
fn duration_study_rejects_mismatched_runs() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("short.toml"), "[phantom]\nn_runs = 1\n[acquisition]\nn_vols = 60\n\
         [design]\nonsets_s = [0.0, 60.0, 120.0]\ndurations_s = [30.0, 30.0, 30.0]\nrun_length_s = 180.0\n").unwrap();
    ok(d.path(), &["simulate", "--out", "long"]);
    ok(d.path(), &["simulate", "--config", "short.toml", "--out", "short"]);
    fs::write(
        d.path().join("c.toml"),
        "[input]\nfiles = [\"long/run-1.nii.gz\", \"short/run-1.nii.gz\"]\n[input.rois]\n",
    )
    .unwrap();
    let r = boldkit(d.path(), &["duration-study", "--config", "c.toml", "--out", "ds"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(!d.path().join("ds").exists());

    fs::write(d.path().join("one.toml"), "[input]\nfiles = [\"long/run-1.nii.gz\"]\n").unwrap();
    let r = boldkit(d.path(), &["duration-study", "--config", "one.toml", "--out", "ds"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("exactly two runs"), "{}", r.stderr);
}
