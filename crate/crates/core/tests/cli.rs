use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bergman-lab"))
}

fn read_rows(path: &Path) -> (String, Vec<csv::StringRecord>, csv::StringRecord) {
    let text = std::fs::read_to_string(path).unwrap();
    let (header, body) = text.split_once('\n').unwrap();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let cols = rdr.headers().unwrap().clone();
    (header.to_string(), rdr.records().map(|r| r.unwrap()).collect(), cols)
}

fn col(cols: &csv::StringRecord, name: &str) -> usize {
    cols.iter().position(|c| c == name).unwrap()
}

#[test]
fn diagonal_subcommand_writes_fubini_study_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["diagonal", "--p", "8,16,32", "--json", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows, cols) = read_rows(&dir.path().join("diagonal.csv"));
    assert!(header.starts_with("# bergman-lab ") && header.contains("config_hash="));
    assert_eq!(rows.len(), 3);
    for (row, p) in rows.iter().zip([8.0, 16.0, 32.0]) {
        let r: f64 = row[col(&cols, "residual")].parse().unwrap();
        assert!((r - 1.0 / p).abs() < 1e-8);
        // 17 significant digits, scientific notation.
        let mantissa = row[col(&cols, "residual")].split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
    }
    assert!(dir.path().join("diagonal.json").exists());
    assert!(dir.path().join("diagonal_timing.csv").exists());
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "kind = \"diagonal\"\np = [8, 16]\n[weight]\nname = \"family\"\nzeta = [0.5]\n",
    )
    .unwrap();
    let mut files = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let st = bin().args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).status().unwrap();
        assert!(st.success());
        files.push(std::fs::read(out_dir.join("diagonal.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn spectrum_row_reports_the_kernel_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["spectrum", "--p", "16", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let (_, rows, cols) = read_rows(&dir.path().join("spectrum.csv"));
    assert_eq!(&rows[0][col(&cols, "kernel_dim")], "17");
    assert_eq!(&rows[0][col(&cols, "status")], "ok");
}

#[test]
fn filter_rows_start_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["filter", "--p", "25", "--zeta", "1,0.5", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let (_, rows, cols) = read_rows(&dir.path().join("filter.csv"));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let f0: f64 = row[col(&cols, "f0")].parse().unwrap();
        assert!((f0 - 1.0).abs() < 1e-10);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"diagonal\"\np = [16, 8]\n").unwrap();
    let st = bin().args(["sweep", "--config"]).arg(&bad).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));

    let st = bin().args(["diagonal", "--zeta", "1.5", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));

    let capped = dir.path().join("capped.toml");
    std::fs::write(&capped, "kind = \"diagonal\"\np = [4, 8]\n[quadrature]\nnode_cap = 1000\n").unwrap();
    let st = bin().args(["sweep", "--config"]).arg(&capped).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(3));
    let (_, rows, cols) = read_rows(&dir.path().join("diagonal.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][col(&cols, "status")], "error");

    let coarse = dir.path().join("coarse.toml");
    std::fs::write(
        &coarse,
        "kind = \"spectrum\"\np = [8]\n[weight]\nname = \"tilt\"\ncoef = 0.2\n[spectral]\nladder = [1, 2]\n",
    )
    .unwrap();
    let st = bin().args(["sweep", "--config"]).arg(&coarse).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(4));
}

#[test]
fn json_configs_and_thread_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "near-diagonal", "p": [16, 32], "weight": {"name": "family", "zeta": [0.5]}}"#,
    )
    .unwrap();
    let st = bin()
        .args(["sweep", "--threads", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let (_, rows, cols) = read_rows(&dir.path().join("near-diagonal.csv"));
    let r: Vec<f64> = rows.iter().map(|r| r[col(&cols, "residual")].parse().unwrap()).collect();
    assert!(r[1] < r[0]);
}
