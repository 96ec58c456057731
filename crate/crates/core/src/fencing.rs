//! Fencing game scoring and the heuristic protector pose.

use std::io::Read;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// Consecutive in-target ticks after which the protector is penalized.
pub const DWELL_LIMIT: u32 = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FencingError {
    #[error("bat endpoints coincide")]
    DegenerateBat,
    #[error("sword length must be positive and finite, got {0}")]
    BadSwordLength(f64),
    #[error("opponent bat axis must be a non-zero finite vector")]
    ZeroAxis,
    #[error("stream has {len} ticks, more than the horizon {horizon}")]
    TooLong { len: usize, horizon: usize },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FencingTick {
    pub bat_a_in_target: bool,
    pub bats_contact: bool,
    pub bat_p_in_target: bool,
}

impl FencingTick {
    pub fn new(bat_a_in_target: bool, bats_contact: bool, bat_p_in_target: bool) -> Self {
        Self { bat_a_in_target, bats_contact, bat_p_in_target }
    }
}

/// How the dwell bonus is awarded once the protector has stayed in the
/// target longer than [`DWELL_LIMIT`] ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DwellRule {
    /// +10 once, on the first tick past the limit; re-armed when the stay ends.
    #[default]
    OncePerStay,
    /// +10 on every tick past the limit.
    EveryTick,
}

impl std::str::FromStr for DwellRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "once_per_stay" | "once" => Ok(Self::OncePerStay),
            "every_tick" | "per_tick" => Ok(Self::EveryTick),
            other => Err(format!("unknown dwell rule `{other}` (once_per_stay, every_tick)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefereeState {
    pub score: i64,
    pub dwell: u32,
}

/// Advances the referee by one tick and returns the new state and the
/// score change.
pub fn referee_step(state: RefereeState, tick: FencingTick, rule: DwellRule) -> (RefereeState, i64) {
    let mut delta = 0;
    if tick.bat_a_in_target {
        delta += if tick.bats_contact { -10 } else { 1 };
    }
    let dwell = if tick.bat_p_in_target { state.dwell.saturating_add(1) } else { 0 };
    let bonus = match rule {
        DwellRule::OncePerStay => dwell == DWELL_LIMIT + 1,
        DwellRule::EveryTick => dwell > DWELL_LIMIT,
    };
    if bonus {
        delta += 10;
    }
    (RefereeState { score: state.score + delta, dwell }, delta)
}

/// Per-tick score changes, starting from the zero state.
pub fn referee_trace(ticks: &[FencingTick], rule: DwellRule) -> Vec<i64> {
    let mut state = RefereeState::default();
    ticks
        .iter()
        .map(|&t| {
            let (next, d) = referee_step(state, t, rule);
            state = next;
            d
        })
        .collect()
}

/// Final score of a game no longer than `horizon` ticks.
pub fn referee_run(ticks: &[FencingTick], horizon: usize, rule: DwellRule) -> Result<i64, FencingError> {
    if ticks.len() > horizon {
        return Err(FencingError::TooLong { len: ticks.len(), horizon });
    }
    Ok(ticks
        .iter()
        .fold(RefereeState::default(), |s, &t| referee_step(s, t, rule).0)
        .score)
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Some(true),
        "0" | "false" | "f" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a tick stream with header `t,bat_a_in_target,bats_contact,bat_p_in_target`.
/// Flags accept `0/1` or `true/false`. Rows are numbered from 1 after the
/// header in errors.
pub fn read_ticks_csv<R: Read>(input: R) -> Result<Vec<FencingTick>, FencingError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let want = ["t", "bat_a_in_target", "bats_contact", "bat_p_in_target"];
    let headers = rdr.headers().map_err(|e| FencingError::Row { row: 0, message: e.to_string() })?;
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(FencingError::Row {
            row: 0,
            message: format!("expected header `{}`", want.join(",")),
        });
    }
    let mut ticks = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| FencingError::Row { row, message: e.to_string() })?;
        if rec[0].parse::<u64>().is_err() {
            return Err(FencingError::Row {
                row,
                message: format!("invalid time index `{}`", &rec[0]),
            });
        }
        let mut flags = [false; 3];
        for (k, f) in flags.iter_mut().enumerate() {
            *f = parse_flag(&rec[k + 1]).ok_or_else(|| FencingError::Row {
                row,
                message: format!("invalid flag `{}` in column {}", &rec[k + 1], want[k + 1]),
            })?;
        }
        ticks.push(FencingTick::new(flags[0], flags[1], flags[2]));
    }
    Ok(ticks)
}

/// Target center, opponent bat endpoints and bat length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatGeometry {
    pub tar: Vector3<f64>,
    pub h_up: Vector3<f64>,
    pub h_low: Vector3<f64>,
    pub l_sword: f64,
}

/// `ht = clamp((tar − h_low)·(h_up − h_low) / (2·L_sword), 0, 1)`.
pub fn closest_point_fraction(g: &BatGeometry) -> Result<f64, FencingError> {
    let axis = g.h_up - g.h_low;
    if axis.norm() == 0.0 {
        return Err(FencingError::DegenerateBat);
    }
    if !(g.l_sword > 0.0 && g.l_sword.is_finite()) {
        return Err(FencingError::BadSwordLength(g.l_sword));
    }
    Ok(((g.tar - g.h_low).dot(&axis) / (2.0 * g.l_sword)).clamp(0.0, 1.0))
}

/// Bat position commanded between the target and the closest point on the
/// opponent's bat, `u ∈ [0.5, 1]` of the way towards the bat.
pub fn heuristic_defense_position(g: &BatGeometry, u: f64) -> Result<Vector3<f64>, FencingError> {
    let ht = closest_point_fraction(g)?;
    let h_close = g.h_low + (g.h_up - g.h_low) * ht;
    Ok(g.tar + (h_close - g.tar) * u)
}

/// Unit vector perpendicular to `axis`, rotated by `offsets_deg` about the
/// fixed x, y and z axes (in that order).
///
/// The perpendicular is `axis × e_k` for the basis vector `e_k` least
/// aligned with `axis`, normalized.
pub fn heuristic_defense_orientation(axis: Vector3<f64>, offsets_deg: [f64; 3]) -> Result<Vector3<f64>, FencingError> {
    let n = axis.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(FencingError::ZeroAxis);
    }
    let a = axis / n;
    let k = a.iamin();
    let perp = a.cross(&Vector3::ith(k, 1.0)).normalize();
    let [rx, ry, rz] = offsets_deg.map(f64::to_radians);
    let r = Rotation3::from_euler_angles(rx, ry, rz);
    Ok((r * perp).normalize())
}
