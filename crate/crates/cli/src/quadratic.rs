use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::{json, Value};
use stmarl_core::quadratic_games::QuadraticGame;
use stmarl_core::stackelberg::{check_dse, iterate, CgSettings, DifferentiableGame, DseReport, Dynamics, StackelbergConfig};

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance file: `d1 d2`, rows of A, B, C, then a and c.
    pub instance: PathBuf,
    /// Regularization of the follower Hessian in the leader update.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_steps: usize,
    /// Starting point θ1 then θ2, comma separated (default zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub instance: PathBuf,
    /// Leader point, comma separated (default: the analytic DSE).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x1: Option<Vec<f64>>,
    /// Follower point, comma separated (default: the analytic DSE).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x2: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    /// Exit with status 2 when the point is not a DSE.
    #[arg(long)]
    pub strict: bool,
}

fn load(path: &Path) -> Result<QuadraticGame> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    QuadraticGame::parse(&text).with_context(|| format!("{}", path.display()))
}

fn report_json(r: &DseReport) -> Value {
    json!({
        "is_dse": r.is_dse,
        "leader_total_grad_norm": r.leader_total_grad_norm,
        "follower_grad_norm": r.follower_grad_norm,
        "leader_curvature_ok": r.leader_curvature_ok,
        "leader_curvature_ok_as_minimizer": r.leader_curvature_ok_as_minimizer(),
        "follower_curvature_ok": r.follower_curvature_ok,
        "leader_curvature_eigenvalues": r.leader_curvature_eigenvalues,
        "follower_hessian_eigenvalues": r.follower_hessian_eigenvalues,
    })
}

fn point(g: &QuadraticGame, x1: &[f64], x2: &[f64]) -> Value {
    json!({ "theta1": x1, "theta2": x2, "leader_value": g.value(x1, x2) })
}

pub fn solve(args: SolveArgs) -> Result<()> {
    let g = load(&args.instance)?;
    let (d1, d2) = g.dims();
    let start = args.start.unwrap_or_else(|| vec![0.0; d1 + d2]);
    if start.len() != d1 + d2 {
        bail!("--start needs {} values (d1 + d2), got {}", d1 + d2, start.len());
    }
    let (n1, n2) = g.analytic_nash()?;
    let (s1, s2) = g.analytic_dse()?;

    let (lr1, lr2) = g.stackelberg_learning_rates()?;
    let mut cfg = StackelbergConfig::new(lr1, lr2, args.lambda);
    cfg.cg = CgSettings { iters: 4 * d2 + 10, tol: 1e-14 };
    let st = iterate(&g, &start[..d1], &start[d1..], Dynamics::Stackelberg(cfg), args.max_steps, 1e-13)?;
    let sim = match g.simultaneous_learning_rate() {
        Some(lr) => {
            let o = iterate(
                &g,
                &start[..d1],
                &start[d1..],
                Dynamics::Simultaneous { leader_lr: lr, follower_lr: lr },
                args.max_steps,
                1e-14,
            )?;
            json!({ "learning_rate": lr, "steps": o.steps, "converged": o.converged, "point": point(&g, &o.leader, &o.follower) })
        }
        None => json!({ "skipped": "simultaneous dynamics have no stability guarantee for this instance" }),
    };
    let report = check_dse(&g, &s1, &s2, 1e-8, 1e-5);
    let out = json!({
        "nash": point(&g, &n1, &n2),
        "dse": point(&g, &s1, &s2),
        "leader_advantage": g.value(&s1, &s2) - g.value(&n1, &n2),
        "stackelberg_dynamics": {
            "learning_rates": [lr1, lr2],
            "lambda": args.lambda,
            "steps": st.steps,
            "converged": st.converged,
            "point": point(&g, &st.leader, &st.follower),
        },
        "simultaneous_dynamics": sim,
        "dse_report": report_json(&report),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

/// Returns whether the point passed.
pub fn verify(args: VerifyArgs) -> Result<bool> {
    let g = load(&args.instance)?;
    let (x1, x2) = match (args.x1, args.x2) {
        (Some(a), Some(b)) => (a, b),
        (None, None) => g.analytic_dse()?,
        _ => bail!("give both --x1 and --x2, or neither"),
    };
    let (d1, d2) = g.dims();
    if x1.len() != d1 || x2.len() != d2 {
        bail!("point has dimensions ({}, {}), instance has ({d1}, {d2})", x1.len(), x2.len());
    }
    let report = check_dse(&g, &x1, &x2, args.tol, args.fd_step);
    let out = json!({ "point": point(&g, &x1, &x2), "tol": args.tol, "report": report_json(&report) });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(report.is_dse || !args.strict)
}
