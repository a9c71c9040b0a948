//! Acceptance criterion 10: every command rerun with the same seed produces
//! byte-identical output files. Run with `--nocapture` to see the line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_papertrust"))
}

fn example(name: &str) -> String {
    format!("{}/examples/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        out.insert(
            entry.file_name().to_string_lossy().into_owned(),
            fs::read(entry.path()).unwrap(),
        );
    }
    out
}

#[test]
fn criterion_10_byte_identical_reruns() {
    let start = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let jobs: [(&str, String); 4] = [
        ("gen", example("gen-demo.json")),
        ("metrics", example("metrics-default.json")),
        ("attack", example("attack-matrix.json")),
        ("scenario", example("ecommerce-p2p.json")),
    ];

    for (command, config) in &jobs {
        let mut dirs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{command}-{run}"));
            let status = bin()
                .args([
                    command,
                    "--config",
                    config,
                    "--out",
                    out.to_str().unwrap(),
                    "--seed",
                    "12345",
                ])
                .status()
                .unwrap();
            assert!(status.success(), "{command} run {run} failed");
            dirs.push(out);
        }
        let a = dir_contents(&dirs[0]);
        let b = dir_contents(&dirs[1]);
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "{command}: file sets differ"
        );
        for (name, bytes) in &a {
            assert_eq!(bytes, &b[name], "{command}: {name} differs between reruns");
        }
    }

    println!(
        "acceptance criterion 10 (byte-identical reruns): PASS ({:.1}s) all 4 commands",
        start.elapsed().as_secs_f64()
    );
}
