use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn d2dsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_d2dsim")).args(args).output().expect("binary runs")
}

fn short_config(dir: &Path) -> String {
    let path = dir.join("short.toml");
    fs::write(&path, "[sim]\nduration_s = 60.0\n\n[catalog]\ncontents = 20\n").unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let a = d2dsim(&["run", "--config", &cfg, "--seed", "4"]);
    let b = d2dsim(&["run", "--config", &cfg, "--seed", "4"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("metric,value\npolicy,epdc\nseed,4\n"));
}

#[test]
fn run_writes_one_file_set_per_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("out");
    let o = d2dsim(&["run", "--config", &cfg, "--policies", "lru,opt", "--trace", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["lru", "opt"] {
        for f in [format!("metrics_{p}.csv"), format!("config_{p}.toml"), format!("trace_{p}.csv")] {
            assert!(out.join(&f).is_file(), "missing {f}");
        }
    }
}

#[test]
fn bad_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[cache]\nc_dev_bits = -1.0\n").unwrap();
    let o = d2dsim(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cache.c_dev_bits"));

    fs::write(&path, "[cache]\nno_such_key = 1\n").unwrap();
    assert_eq!(d2dsim(&["run", "--config", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn sweep_then_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        "parameter = \"c_dev_bits\"\nvalues = [100e6, 200e6]\npolicies = [\"lru\", \"epdc\"]\nreplications = 2\n\n[base.sim]\nduration_s = 60.0\n\n[base.catalog]\ncontents = 20\n",
    )
    .unwrap();
    let runs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = d2dsim(&["sweep", "--config", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            for f in ["results.csv", "aggregates.csv", "manifest.json", "timings.csv"] {
                assert!(out.join(f).is_file(), "missing {f}");
            }
            fs::read(out.join("results.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let a = dir.path().join("a");
    assert_eq!(fs::read(a.join("aggregates.csv")).unwrap(), fs::read(dir.path().join("b/aggregates.csv")).unwrap());

    let o = d2dsim(&["plotdata", "--input", a.to_str().unwrap(), "--figure", "total_energy_vs_cdev"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("policy,value,component,mean,ci95\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 16);

    let o = d2dsim(&["plotdata", "--input", a.to_str().unwrap(), "--figure", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("total_energy_vs_cdev"));
}

#[test]
fn plotdata_lists_figures() {
    let o = d2dsim(&["plotdata", "--list"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 48);
}
