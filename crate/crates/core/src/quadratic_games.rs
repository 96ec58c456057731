//! Two-player quadratic games with closed-form equilibria.
//!
//! `J(θ1, θ2) = θ1ᵀAθ1 + θ1ᵀBθ2 + θ2ᵀCθ2 + aᵀθ1 + cᵀθ2`, player 1 maximizing.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::stackelberg::DifferentiableGame;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuadraticError {
    #[error("{what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: String, got: String },
    #[error("matrix {0} is not symmetric")]
    NotSymmetric(&'static str),
    #[error("follower block C is not positive definite")]
    FollowerNotConvex,
    #[error("reduced leader curvature 2A − ½BC⁻¹Bᵀ is not negative definite")]
    LeaderNotConcave,
    #[error("first-order system is singular")]
    Singular,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticGame {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    lin_a: DVector<f64>,
    lin_c: DVector<f64>,
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

impl QuadraticGame {
    /// Builds an instance, checking shapes, symmetry of `A` and `C`, and
    /// finiteness. Definiteness is only checked by the analytic solvers.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        lin_a: DVector<f64>,
        lin_c: DVector<f64>,
    ) -> Result<Self, QuadraticError> {
        let (d1, d2) = (a.nrows(), c.nrows());
        let check = |what, m: &DMatrix<f64>, r: usize, cl: usize| {
            if m.nrows() != r || m.ncols() != cl {
                Err(QuadraticError::Dimension {
                    what,
                    expected: format!("{r}x{cl}"),
                    got: shape(m),
                })
            } else {
                Ok(())
            }
        };
        check("A", &a, d1, d1)?;
        check("B", &b, d1, d2)?;
        check("C", &c, d2, d2)?;
        if lin_a.len() != d1 {
            return Err(QuadraticError::Dimension {
                what: "a",
                expected: d1.to_string(),
                got: lin_a.len().to_string(),
            });
        }
        if lin_c.len() != d2 {
            return Err(QuadraticError::Dimension {
                what: "c",
                expected: d2.to_string(),
                got: lin_c.len().to_string(),
            });
        }
        for (name, ok) in [
            ("A", a.iter().all(|v| v.is_finite())),
            ("B", b.iter().all(|v| v.is_finite())),
            ("C", c.iter().all(|v| v.is_finite())),
            ("a", lin_a.iter().all(|v| v.is_finite())),
            ("c", lin_c.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(QuadraticError::NonFinite(name));
            }
        }
        if !is_symmetric(&a) {
            return Err(QuadraticError::NotSymmetric("A"));
        }
        if !is_symmetric(&c) {
            return Err(QuadraticError::NotSymmetric("C"));
        }
        Ok(Self { a, b, c, lin_a, lin_c })
    }

    /// Scalar instance `a·θ1² + b·θ1θ2 + c·θ2² + la·θ1 + lc·θ2`.
    pub fn scalar(a: f64, b: f64, c: f64, la: f64, lc: f64) -> Result<Self, QuadraticError> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DVector::from_element(1, la),
            DVector::from_element(1, lc),
        )
    }

    /// Random instance with `C = MᵀM + 0.1I`, `A = −(NᵀN + 0.1I)` and
    /// standard normal `B`, `a`, `c`. `M` and `N` have entries `N(0, 1/d)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d1: usize, d2: usize) -> Self {
        let mut normal = |r: usize, c: usize, s: f64| {
            DMatrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
        };
        let m = normal(d2, d2, 1.0 / (d2 as f64).sqrt());
        let n = normal(d1, d1, 1.0 / (d1 as f64).sqrt());
        let b = normal(d1, d2, 1.0);
        let la = normal(d1, 1, 1.0);
        let lc = normal(d2, 1, 1.0);
        let c = m.transpose() * &m + DMatrix::identity(d2, d2) * 0.1;
        let a = -(n.transpose() * &n + DMatrix::identity(d1, d1) * 0.1);
        Self {
            a: (&a + a.transpose()) * 0.5,
            b,
            c: (&c + c.transpose()) * 0.5,
            lin_a: la.column(0).into(),
            lin_c: lc.column(0).into(),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn lin_a(&self) -> &DVector<f64> {
        &self.lin_a
    }
    pub fn lin_c(&self) -> &DVector<f64> {
        &self.lin_c
    }

    /// The same game with the roles of the players exchanged: the new
    /// leader is the old follower, and the objective is negated so that the
    /// new leader still maximizes.
    pub fn swapped(&self) -> Self {
        Self {
            a: -&self.c,
            b: -self.b.transpose(),
            c: -&self.a,
            lin_a: -&self.lin_c,
            lin_c: -&self.lin_a,
        }
    }

    fn follower_cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, QuadraticError> {
        self.c.clone().cholesky().ok_or(QuadraticError::FollowerNotConvex)
    }

    /// `θ2*(θ1) = −½C⁻¹(Bᵀθ1 + c)`.
    pub fn best_response(&self, theta1: &[f64]) -> Result<Vec<f64>, QuadraticError> {
        self.check_leader(theta1)?;
        let chol = self.follower_cholesky()?;
        let rhs = self.b.transpose() * DVector::from_column_slice(theta1) + &self.lin_c;
        Ok((chol.solve(&rhs) * -0.5).as_slice().to_vec())
    }

    /// Reduced leader Hessian `2A − ½BC⁻¹Bᵀ` of `θ1 ↦ J(θ1, θ2*(θ1))`.
    pub fn reduced_curvature(&self) -> Result<DMatrix<f64>, QuadraticError> {
        let chol = self.follower_cholesky()?;
        let cinv_bt = chol.solve(&self.b.transpose());
        let h = &self.a * 2.0 - &self.b * cinv_bt * 0.5;
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Closed-form differential Stackelberg equilibrium.
    pub fn analytic_dse(&self) -> Result<(Vec<f64>, Vec<f64>), QuadraticError> {
        let h = self.reduced_curvature()?;
        if (-&h).cholesky().is_none() {
            return Err(QuadraticError::LeaderNotConcave);
        }
        let chol = self.follower_cholesky()?;
        let rhs = -&self.lin_a + &self.b * chol.solve(&self.lin_c) * 0.5;
        let theta1 = h.lu().solve(&rhs).ok_or(QuadraticError::Singular)?;
        let theta1 = theta1.as_slice().to_vec();
        let theta2 = self.best_response(&theta1)?;
        Ok((theta1, theta2))
    }

    /// Simultaneous stationary point of the stacked first-order system.
    pub fn analytic_nash(&self) -> Result<(Vec<f64>, Vec<f64>), QuadraticError> {
        let (d1, d2) = self.dims();
        let n = d1 + d2;
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (d1, d1)).copy_from(&(&self.a * 2.0));
        m.view_mut((0, d1), (d1, d2)).copy_from(&self.b);
        m.view_mut((d1, 0), (d2, d1)).copy_from(&self.b.transpose());
        m.view_mut((d1, d1), (d2, d2)).copy_from(&(&self.c * 2.0));
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, d1).copy_from(&-&self.lin_a);
        rhs.rows_mut(d1, d2).copy_from(&-&self.lin_c);
        let scale = m.amax().max(1.0);
        let svd = m.clone().svd(false, false);
        if svd.singular_values.min() <= 1e-12 * scale {
            return Err(QuadraticError::Singular);
        }
        let x = m.lu().solve(&rhs).ok_or(QuadraticError::Singular)?;
        Ok((x.rows(0, d1).as_slice().to_vec(), x.rows(d1, d2).as_slice().to_vec()))
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.c.nrows())
    }

    fn check_leader(&self, theta1: &[f64]) -> Result<(), QuadraticError> {
        if theta1.len() != self.a.nrows() {
            return Err(QuadraticError::Dimension {
                what: "θ1",
                expected: self.a.nrows().to_string(),
                got: theta1.len().to_string(),
            });
        }
        Ok(())
    }

    /// Learning rates under which Stackelberg dynamics contract: `1/|λ|max`
    /// of the reduced leader curvature and of `2C`.
    pub fn stackelberg_learning_rates(&self) -> Result<(f64, f64), QuadraticError> {
        let h = self.reduced_curvature()?;
        let lead = max_abs_eigenvalue(&h);
        let follow = max_abs_eigenvalue(&(&self.c * 2.0));
        Ok((1.0 / lead, 1.0 / follow))
    }

    /// A common learning rate for simultaneous dynamics, `m/‖M‖²` where `M`
    /// is the Jacobian of the descent field `(−∇₁J, ∇₂J)` and `m` the smallest
    /// eigenvalue of its symmetric part. `None` when that part is not
    /// positive definite (no guarantee of local stability).
    pub fn simultaneous_learning_rate(&self) -> Option<f64> {
        let (d1, d2) = self.dims();
        let n = d1 + d2;
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (d1, d1)).copy_from(&(&self.a * -2.0));
        m.view_mut((0, d1), (d1, d2)).copy_from(&-&self.b);
        m.view_mut((d1, 0), (d2, d1)).copy_from(&self.b.transpose());
        m.view_mut((d1, d1), (d2, d2)).copy_from(&(&self.c * 2.0));
        let sym = (&m + m.transpose()) * 0.5;
        let low = SymmetricEigen::new(sym).eigenvalues.min();
        if low <= 0.0 {
            return None;
        }
        let spectral = m.svd(false, false).singular_values.max();
        Some(low / (spectral * spectral))
    }

    /// Parses the plain-text instance format written by [`Self::to_text`].
    ///
    /// Blank lines and lines starting with `#` are ignored. The first data
    /// line holds `d1 d2`, followed by the rows of `A` (d1 rows), `B` (d1
    /// rows), `C` (d2 rows), then one line for `a` and one for `c`.
    pub fn parse(text: &str) -> Result<Self, QuadraticError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut last_line = 0;
        let mut next_row = |want: usize, what: &str| -> Result<(usize, Vec<f64>), QuadraticError> {
            let (no, line) = lines.next().ok_or_else(|| QuadraticError::Parse {
                line: last_line + 1,
                message: format!("unexpected end of input while reading {what}"),
            })?;
            last_line = no;
            let vals = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| QuadraticError::Parse {
                        line: no,
                        message: format!("invalid number `{t}` in {what}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if want != 0 && vals.len() != want {
                return Err(QuadraticError::Parse {
                    line: no,
                    message: format!("{what}: expected {want} values, found {}", vals.len()),
                });
            }
            if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
                return Err(QuadraticError::Parse {
                    line: no,
                    message: format!("non-finite value {v} in {what}"),
                });
            }
            Ok((no, vals))
        };
        let (no, dims) = next_row(2, "dimensions")?;
        let as_dim = |v: f64| -> Result<usize, QuadraticError> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e6 {
                Ok(v as usize)
            } else {
                Err(QuadraticError::Parse {
                    line: no,
                    message: format!("dimension must be a positive integer, found {v}"),
                })
            }
        };
        let (d1, d2) = (as_dim(dims[0])?, as_dim(dims[1])?);
        let mut matrix = |rows: usize, cols: usize, what: &str| -> Result<(usize, DMatrix<f64>), QuadraticError> {
            let mut data = Vec::with_capacity(rows * cols);
            let mut first = 0;
            for r in 0..rows {
                let (no, row) = next_row(cols, what)?;
                if r == 0 {
                    first = no;
                }
                data.extend(row);
            }
            Ok((first, DMatrix::from_row_slice(rows, cols, &data)))
        };
        let (la, a) = matrix(d1, d1, "A")?;
        let (_, b) = matrix(d1, d2, "B")?;
        let (lc, c) = matrix(d2, d2, "C")?;
        let (_, lin_a) = matrix(1, d1, "a")?;
        let (_, lin_c) = matrix(1, d2, "c")?;
        if let Some((no, _)) = lines.next() {
            return Err(QuadraticError::Parse {
                line: no,
                message: "trailing data after c".into(),
            });
        }
        Self::new(
            a,
            b,
            c,
            DVector::from_column_slice(lin_a.as_slice()),
            DVector::from_column_slice(lin_c.as_slice()),
        )
        .map_err(|e| match e {
            QuadraticError::NotSymmetric(name) => QuadraticError::Parse {
                line: if name == "A" { la } else { lc },
                message: format!("matrix {name} is not symmetric"),
            },
            other => other,
        })
    }

    /// Serializes in the format accepted by [`Self::parse`], using the
    /// shortest representation that round-trips each value.
    pub fn to_text(&self) -> String {
        let (d1, d2) = self.dims();
        let mut out = String::new();
        let _ = writeln!(out, "{d1} {d2}");
        let mut rows = |m: &DMatrix<f64>| {
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        };
        rows(&self.a);
        rows(&self.b);
        rows(&self.c);
        rows(&DMatrix::from_row_slice(1, d1, self.lin_a.as_slice()));
        rows(&DMatrix::from_row_slice(1, d2, self.lin_c.as_slice()));
        out
    }
}

fn max_abs_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

impl DifferentiableGame for QuadraticGame {
    fn leader_dim(&self) -> usize {
        self.a.nrows()
    }

    fn follower_dim(&self) -> usize {
        self.c.nrows()
    }

    fn value(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let t1 = DVector::from_column_slice(x1);
        let t2 = DVector::from_column_slice(x2);
        t1.dot(&(&self.a * &t1)) + t1.dot(&(&self.b * &t2)) + t2.dot(&(&self.c * &t2)) + self.lin_a.dot(&t1)
            + self.lin_c.dot(&t2)
    }

    fn grad1(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let t1 = DVector::from_column_slice(x1);
        let t2 = DVector::from_column_slice(x2);
        (&self.a * &t1 * 2.0 + &self.b * &t2 + &self.lin_a).as_slice().to_vec()
    }

    fn grad2(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let t1 = DVector::from_column_slice(x1);
        let t2 = DVector::from_column_slice(x2);
        (self.b.transpose() * &t1 + &self.c * &t2 * 2.0 + &self.lin_c).as_slice().to_vec()
    }

    fn hvp2(&self, _: &[f64], _: &[f64], v: &[f64]) -> Vec<f64> {
        (&self.c * DVector::from_column_slice(v) * 2.0).as_slice().to_vec()
    }

    fn mixed12(&self, _: &[f64], _: &[f64], v: &[f64]) -> Vec<f64> {
        (&self.b * DVector::from_column_slice(v)).as_slice().to_vec()
    }
}
