use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqal::data_model::{
    write_pool, BoundingBox, Frame, PoolState, Season, Sequence, SequenceMeta, Split, TimeOfDay,
};

fn seqal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seqal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_POOL: &str = r#"
[pool]
source = "synthetic"

[pool.synthetic]
rng_seed = 5
n_sequences = 12
frame_len_range = [10, 20]
raster_size = [32, 32]
object_size_range = [6, 10]
objects_per_seq_range = [1, 3]
"#;

fn write(path: &Path, text: &str) -> PathBuf {
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn seq(id: &str, cost: f64, n: u32, split: Split) -> Sequence {
    Sequence {
        meta: SequenceMeta {
            sequence_id: id.into(),
            cost_hours: cost,
            scene_id: 1,
            season: Season::Summer,
            time_of_day: TimeOfDay::Noon,
            split,
        },
        frames: (0..n)
            .map(|frame_id| Frame {
                frame_id,
                boxes: vec![BoundingBox::new(0, 0.5, 0.5, 0.2, 0.2)],
                raster: None,
            })
            .collect(),
        motion_scores: None,
        box_estimates: None,
    }
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("small.toml"), SMALL_POOL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    ok(&["gen", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let ta = tree(&a);
    assert!(ta.iter().any(|(p, _)| p.ends_with("manifest.csv")));
    assert!(ta.iter().any(|(p, _)| p.starts_with("labels/training")));
    assert!(ta.iter().any(|(p, _)| p.starts_with("frames/test")));
    assert_eq!(ta, tree(&b));
}

#[test]
fn missing_pool_section_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("bad.toml"), "[run]\nrounds = 2\n");
    let out = seqal(&["gen", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("p").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing section [pool]"));
    let out = seqal(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = seqal(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_pool_data_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool");
    let p = PoolState::new(vec![seq("a", 1.0, 3, Split::Train)]).unwrap();
    write_pool(&p, &pool).unwrap();
    fs::write(pool.join("labels/training/a_000001.txt"), "0 0.5 0.5 0.2\n").unwrap();
    let out = seqal(&["bounds", "--pool", pool.to_str().unwrap(), "--rounds", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bounds_example() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool");
    let p = PoolState::new(vec![
        seq("a", 5.0, 10, Split::Train),
        seq("b", 1.0, 20, Split::Train),
        seq("c", 3.0, 30, Split::Train),
        seq("t", 9.0, 5, Split::Test),
    ])
    .unwrap();
    write_pool(&p, &pool).unwrap();
    let before = tree(&pool);
    let csv = ok(&["bounds", "--pool", pool.to_str().unwrap(), "--rounds", "3"]);
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["round", "lower_cost_h", "upper_cost_h", "lower_gflops", "upper_gflops"]);
    let lower: Vec<&str> = rows[1..].iter().map(|r| r[1]).collect();
    let upper: Vec<&str> = rows[1..].iter().map(|r| r[2]).collect();
    assert_eq!(lower, ["1.000000", "4.000000", "9.000000"]);
    assert_eq!(upper, ["5.000000", "8.000000", "9.000000"]);
    // 60 frames, then shortest-first removal: 60, 50, 30
    assert_eq!(rows[3][3], format!("{:.6}", 4.1 * 60.0 + 4.1 * 50.0 + 4.1 * 30.0));
    assert_eq!(tree(&pool), before);
}

#[test]
fn run_metrics_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = format!(
        "{SMALL_POOL}\n[strategy]\nkind = \"entropy\"\n\n[run]\nname = \"ent\"\nrounds = 3\nseeds = [1, 2]\n"
    );
    let cfg = write(&dir.path().join("run.toml"), &cfg_text);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert_eq!(tree(&out_a), tree(&out_b));

    let records = fs::read_to_string(out_a.join("ent/records.csv")).unwrap();
    assert!(records.starts_with("strategy,seed,round,selected_ids,cum_cost_h,cum_gflops,map50,map5095\n"));
    assert_eq!(records.lines().count(), 1 + 2 * 4);
    let aggregate = fs::read_to_string(out_a.join("ent/aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 1 + 4);

    // overrides
    ok(&[
        "run", "--config", cfg.to_str().unwrap(), "--out", out_b.to_str().unwrap(),
        "--strategy", "most_frame", "--seed", "7",
    ]);
    let over = fs::read_to_string(out_b.join("ent/records.csv")).unwrap();
    assert!(over.lines().skip(1).all(|l| l.starts_with("most_frame,7,")));

    let run_dir = out_a.join("ent");
    ok(&[
        "metrics", "--run", run_dir.to_str().unwrap(), "--run", out_b.join("ent").to_str().unwrap(),
        "--car-budgets", "0,5,1000", "--par-budgets", "0.1,1",
    ]);
    let car = fs::read_to_string(run_dir.join("car.csv")).unwrap();
    let rows: Vec<Vec<&str>> = car.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows.iter().filter(|r| r[3] == "0.000000").all(|r| r[4] == "0.000000"));
    let par = fs::read_to_string(run_dir.join("par.csv")).unwrap();
    assert!(par.lines().skip(1).any(|l| l.ends_with(",true")));

    let bad = seqal(&["metrics", "--run", run_dir.to_str().unwrap(), "--par-budgets", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn stats_caches_feed_a_conformal_run_without_touching_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("small.toml"), SMALL_POOL);
    let pool = dir.path().join("pool");
    let cache = dir.path().join("cache");
    ok(&["gen", "--config", cfg.to_str().unwrap(), "--out", pool.to_str().unwrap()]);
    let before = tree(&pool);
    ok(&["stats", "--pool", pool.to_str().unwrap(), "--out", cache.to_str().unwrap()]);
    let again = dir.path().join("cache2");
    ok(&["stats", "--pool", pool.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(tree(&cache), tree(&again));
    assert!(tree(&cache).iter().any(|(p, _)| p.starts_with("flow/training")));

    // strip rasters from a copy so the run must use the caches
    let bare = dir.path().join("bare");
    for (rel, bytes) in &before {
        if rel.starts_with("frames") {
            continue;
        }
        let path = bare.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, bytes).unwrap();
    }
    let run_cfg = write(
        &dir.path().join("focal.toml"),
        &format!(
            "[pool]\nsource = \"focal\"\npath = \"{}\"\nflow_cache = \"{}\"\n\n[strategy]\nkind = \"min_motion\"\n\n[run]\nname = \"mm\"\nrounds = 3\nseeds = [0]\n",
            bare.display(),
            cache.display()
        ),
    );
    let out = dir.path().join("runs");
    ok(&["run", "--config", run_cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    // without caches the same run is missing data
    let no_cache = write(
        &dir.path().join("nocache.toml"),
        &format!(
            "[pool]\nsource = \"focal\"\npath = \"{}\"\n\n[strategy]\nkind = \"min_motion\"\n\n[run]\nrounds = 3\nseeds = [0]\n",
            bare.display()
        ),
    );
    let failed = seqal(&["run", "--config", no_cache.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(failed.status.code(), Some(3), "{}", String::from_utf8_lossy(&failed.stderr));
    assert_eq!(tree(&pool), before);
}

#[test]
fn analyze_sees_box_driven_costs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("boxes.toml"),
        r#"
[pool]
[pool.synthetic]
rng_seed = 3
n_sequences = 40
frame_len_range = [20, 40]
raster_size = [32, 32]
object_size_range = [6, 10]
objects_per_seq_range = [0, 6]

[pool.synthetic.cost_coeffs]
alpha_boxes = 1.0
beta_motion = 0.0
gamma_occlusion = 0.0
delta_length = 0.001
noise_sd = 0.01
"#,
    );
    let pool = dir.path().join("pool");
    ok(&["gen", "--config", cfg.to_str().unwrap(), "--out", pool.to_str().unwrap()]);
    let report = dir.path().join("report.csv");
    ok(&["analyze", "--pool", pool.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variable,n,pearson,spearman,kendall");
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        ["frames", "total_boxes", "occluded_boxes", "mean_motion", "mean_box_estimate", "season", "time_of_day"]
    );
    let boxes: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
    assert!(boxes > 0.9, "{boxes}");
}
