use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn stmarl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmarl"))
        .current_dir(dir)
        .env("STMARL_OUT", dir.join("default-root"))
        .args(args)
        .output()
        .expect("spawn stmarl")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const TINY: &[&str] = &[
    "--episodes",
    "3",
    "--horizon",
    "25",
    "--batch-size",
    "8",
    "--warmup-steps",
    "10",
    "--actor-lr",
    "0.01",
    "--critic-lr",
    "0.01",
];

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(
        &p,
        "[trainer]\nactor_hidden = [4]\ncritic_hidden = [4]\nbuffer_capacity = 500\n",
    )
    .unwrap();
    p
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let cfg = tiny_config(dir);
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out", out];
    // Flags in `extra` replace the matching TINY defaults.
    for pair in TINY.chunks(2) {
        if !extra.contains(&pair[0]) {
            args.extend_from_slice(pair);
        }
    }
    args.extend_from_slice(extra);
    stmarl(dir, &args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn train_writes_config_metrics_and_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(&train(
        tmp.path(),
        "run",
        &["--env", "cartpoles-sym", "--mode", "st_maddpg", "--leader", "1", "--lambda", "1", "--checkpoint-every", "2"],
    ));
    assert!(stdout.contains("seed 0: 3 episodes"), "{stdout}");
    let run = tmp.path().join("run");
    let resolved = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(resolved.contains("lambda = 1.0"), "{resolved}");
    assert!(resolved.contains("mode = \"st_maddpg\""), "{resolved}");
    let metrics = std::fs::read_to_string(run.join("seed_0/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.starts_with("episode,steps,score_p1,critic_loss_mean,cg_fallbacks,wall_ms"));
    assert!(run.join("seed_0/final.ckpt").exists());
    assert!(run.join("seed_0/checkpoints/ep_00002.ckpt").exists());
    let summary = read_json(&run.join("summary.json"));
    assert_eq!(summary[0]["episodes"], 3);

    // The resolved config reproduces the run on its own.
    let again = stmarl(
        tmp.path(),
        &["train", "--config", run.join("config.toml").to_str().unwrap(), "--out", "rerun"],
    );
    ok(&again);
    assert_eq!(
        std::fs::read(run.join("seed_0/metrics.csv")).unwrap(),
        std::fs::read(tmp.path().join("rerun/seed_0/metrics.csv")).unwrap()
    );
}

#[test]
fn zero_episodes_writes_only_the_initial_checkpoint() {
    let tmp = TempDir::new().unwrap();
    ok(&train(tmp.path(), "run", &["--episodes", "0", "--checkpoint-every", "1"]));
    let seed = tmp.path().join("run/seed_0");
    assert!(seed.join("final.ckpt").exists());
    assert_eq!(std::fs::read_dir(seed.join("checkpoints")).unwrap().count(), 0);
    assert_eq!(std::fs::read_to_string(seed.join("metrics.csv")).unwrap().lines().count(), 1);
}

#[test]
fn identical_invocations_give_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    for (out, jobs) in [("a", "1"), ("b", "2")] {
        ok(&train(tmp.path(), out, &["--seeds", "3,4", "--mode", "approx_st", "--jobs", jobs]));
    }
    for seed in ["seed_3", "seed_4"] {
        let a = std::fs::read(tmp.path().join("a").join(seed).join("metrics.csv")).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(seed).join("metrics.csv")).unwrap();
        assert_eq!(a, b, "{seed}");
    }
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = TempDir::new().unwrap();
    ok(&train(tmp.path(), "run", &["--episodes", "0"]));
    let again = train(tmp.path(), "run", &["--episodes", "0"]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));
    ok(&train(tmp.path(), "run", &["--episodes", "0", "--force"]));
}

#[test]
fn invalid_config_leaves_no_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[trainer]\nlearning_rate = 0.1\n").unwrap();
    let out = stmarl(tmp.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", "run"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
    assert!(!tmp.path().join("run").exists());

    let out = stmarl(tmp.path(), &["train", "--out", "run", "--leader", "3"]);
    assert!(!out.status.success());
    let leftovers: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}

#[test]
fn default_output_goes_under_the_root_variable() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--mode", "maddpg"];
    args.extend_from_slice(&TINY[2..]);
    args.extend_from_slice(&["--episodes", "0"]);
    ok(&stmarl(tmp.path(), &args));
    assert!(tmp.path().join("default-root/train-cartpoles-sym-maddpg/seed_0/final.ckpt").exists());
}

fn trained_pool(tmp: &Path, seeds: &str, extra: &[&str]) -> Vec<PathBuf> {
    let mut args = vec!["--seeds", seeds];
    args.extend_from_slice(extra);
    let name = format!("pool-{}", seeds.replace(',', "-"));
    ok(&train(tmp, &name, &args));
    seeds.split(',').map(|s| tmp.join(&name).join(format!("seed_{s}/final.ckpt"))).collect()
}

#[test]
fn tournament_scores_and_summary_agree() {
    let tmp = TempDir::new().unwrap();
    let pool = trained_pool(tmp.path(), "0,1", &[]);
    let p: Vec<&str> = pool.iter().map(|p| p.to_str().unwrap()).collect();
    let out = stmarl(
        tmp.path(),
        &["tournament", "--p1", p[0], p[1], "--p2", p[0], p[1], "--games", "3", "--horizon", "40", "--out", "t", "--jobs", "2"],
    );
    ok(&out);
    let text = std::fs::read_to_string(tmp.path().join("t/scores.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let scores: Vec<f64> = rdr.records().map(|r| r.unwrap()[4].parse().unwrap()).collect();
    assert_eq!(scores.len(), 12);
    let summary = read_json(&tmp.path().join("t/summary.json"));
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((summary["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert_eq!(summary["count"], 12);
    assert_eq!(summary["horizon"], 40);

    let single = stmarl(
        tmp.path(),
        &["tournament", "--p1", p[0], "--p2", p[1], "--games", "1", "--horizon", "40", "--out", "one", "--trajectories"],
    );
    ok(&single);
    let text = std::fs::read_to_string(tmp.path().join("one/scores.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(tmp.path().join("one/trajectories/game_00000.csv").exists());
}

#[test]
fn tournament_baseline_comparison() {
    let tmp = TempDir::new().unwrap();
    let pool = trained_pool(tmp.path(), "0", &[]);
    let p = pool[0].to_str().unwrap();
    ok(&stmarl(tmp.path(), &["tournament", "--p1", p, "--p2", p, "--games", "4", "--horizon", "30", "--out", "a"]));
    let base = tmp.path().join("a/scores.csv");
    ok(&stmarl(
        tmp.path(),
        &["tournament", "--p1", p, "--p2", p, "--games", "4", "--horizon", "30", "--seed", "1", "--out", "b",
          "--baseline", base.to_str().unwrap()],
    ));
    let s = read_json(&tmp.path().join("b/summary.json"));
    let u = s["baseline"]["rank_sum"]["u"].as_f64().unwrap();
    let u_other = s["baseline"]["rank_sum"]["u_other"].as_f64().unwrap();
    assert_eq!(u + u_other, 16.0);
}

#[test]
fn tournament_rejects_incompatible_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let sym = trained_pool(tmp.path(), "0", &["--episodes", "0"]);
    let asym = trained_pool(tmp.path(), "5", &["--episodes", "0", "--env", "cartpoles-asym"]);
    let garbage = tmp.path().join("junk.ckpt");
    std::fs::write(&garbage, b"nope").unwrap();
    let out = stmarl(
        tmp.path(),
        &["tournament", "--p1", sym[0].to_str().unwrap(), garbage.to_str().unwrap(), "--p2", asym[0].to_str().unwrap(),
          "--out", "t"],
    );
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("junk.ckpt") && err.contains("cartpoles-asym"), "{err}");
    assert!(!tmp.path().join("t").exists());
}

#[test]
fn solve_quadratic_scalar_game() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("g.txt");
    std::fs::write(&f, "# scalar game\n1 1\n-1\n1\n1\n0\n0\n").unwrap();
    let out = ok(&stmarl(tmp.path(), &["solve-quadratic", f.to_str().unwrap(), "--start", "2,-1"]));
    let v: Value = serde_json::from_str(&out).unwrap();
    for key in ["nash", "dse"] {
        assert_eq!(v[key]["theta1"][0].as_f64().unwrap(), 0.0);
        assert_eq!(v[key]["theta2"][0].as_f64().unwrap(), 0.0);
    }
    assert_eq!(v["leader_advantage"].as_f64().unwrap(), 0.0);
    assert!(v["stackelberg_dynamics"]["point"]["theta1"][0].as_f64().unwrap().abs() < 1e-6);
    assert_eq!(v["dse_report"]["is_dse"], true);
}

#[test]
fn solve_quadratic_with_linear_terms() {
    // For zero-sum quadratics the DSE is the simultaneous stationary point,
    // so Stackelberg and Nash leader values coincide.
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("g.txt");
    std::fs::write(&f, "1 1\n-1\n1\n1\n-2.5\n0\n").unwrap();
    let v: Value = serde_json::from_str(&ok(&stmarl(tmp.path(), &["solve-quadratic", f.to_str().unwrap()]))).unwrap();
    let adv = v["leader_advantage"].as_f64().unwrap();
    assert!(adv >= -1e-9 && adv.abs() < 1e-9, "{adv}");
    let t1 = v["dse"]["theta1"][0].as_f64().unwrap();
    // Reduced objective −1.25θ² − 2.5θ is maximized at θ = −1.
    assert!((t1 + 1.0).abs() < 1e-12);
}

#[test]
fn malformed_instance_names_the_line() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("g.txt");
    std::fs::write(&f, "1 1\n-1\nx\n1\n0\n0\n").unwrap();
    let out = stmarl(tmp.path(), &["solve-quadratic", f.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn verify_dse_reports_and_strict_mode_fails_off_equilibrium() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("g.txt");
    std::fs::write(&f, "1 1\n-1\n1\n1\n0\n0\n").unwrap();
    let v: Value = serde_json::from_str(&ok(&stmarl(tmp.path(), &["verify-dse", f.to_str().unwrap()]))).unwrap();
    assert_eq!(v["report"]["is_dse"], true);
    let off = stmarl(tmp.path(), &["verify-dse", f.to_str().unwrap(), "--x1", "-0.5", "--x2", "0.25", "--strict"]);
    assert_eq!(off.status.code(), Some(2));
    let v: Value = serde_json::from_str(&String::from_utf8(off.stdout).unwrap()).unwrap();
    assert_eq!(v["report"]["is_dse"], false);
}

#[test]
fn referee_streams_ticks() {
    let tmp = TempDir::new().unwrap();
    let f = tmp.path().join("ticks.csv");
    let mut text = String::from("t,bat_a_in_target,bats_contact,bat_p_in_target\n0,1,1,0\n1,0,0,0\n");
    for t in 2..203 {
        text.push_str(&format!("{t},0,0,1\n"));
    }
    std::fs::write(&f, &text).unwrap();
    let out = ok(&stmarl(tmp.path(), &["referee", f.to_str().unwrap()]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "t,delta,score");
    assert_eq!(lines[1], "0,-10,-10");
    assert_eq!(lines[2], "1,0,-10");
    assert_eq!(lines[203], "202,10,0");
    assert_eq!(*lines.last().unwrap(), "final score: 0");
    let every = ok(&stmarl(tmp.path(), &["referee", f.to_str().unwrap(), "--rule", "every_tick", "--quiet"]));
    assert_eq!(every.trim(), "final score: 0");

    std::fs::write(&f, "t,bat_a_in_target,bats_contact,bat_p_in_target\n0,1,0,0\n1,2,0,0\n").unwrap();
    let bad = stmarl(tmp.path(), &["referee", f.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("row 2"), "{}", stderr(&bad));
}

#[test]
fn disturb_eval_on_an_adversary_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let pool = trained_pool(tmp.path(), "0", &["--env", "cartpole-adversary"]);
    let ckpt = pool[0].to_str().unwrap();
    ok(&stmarl(
        tmp.path(),
        &["disturb-eval", ckpt, "--magnitudes", "0,2", "--trials", "3", "--horizon", "50", "--out", "d"],
    ));
    let rows = std::fs::read_to_string(tmp.path().join("d/disturb.csv")).unwrap();
    assert_eq!(rows.lines().count(), 7);
    let summary = read_json(&tmp.path().join("d/summary.json"));
    assert_eq!(summary.as_array().unwrap().len(), 2);

    let sym = trained_pool(tmp.path(), "1", &["--episodes", "0"]);
    let wrong = stmarl(tmp.path(), &["disturb-eval", sym[0].to_str().unwrap(), "--out", "x"]);
    assert!(!wrong.status.success());
    assert!(stderr(&wrong).contains("cartpole-adversary"));
}
