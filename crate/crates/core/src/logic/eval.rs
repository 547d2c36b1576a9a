//! Formula evaluation over every state of a model at once.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use crate::discretize::{check_discount, discount_factor, TimeGrid};
use crate::error::{Error, Result};
use crate::metrics::{ensembles_for, PathMode};
use crate::process::{ProcessModel, TrajectoryEnsemble};
use crate::rational::{display, to_f64, Rational};
use crate::transport::{stable_sum, DiscreteDistribution};

use super::syntax::{PathFormula, StateFormula};

/// Values of a trajectory formula, indexed `[start state][trajectory]`.
pub type PathValues = Vec<Vec<f64>>;

/// Evaluates formulas of both logics against one model and discount.
///
/// Kernels are computed on first use and cached per time. Trajectory
/// ensembles (needed only by `int`) are built once, over the grid given at
/// construction, either exactly or by seeded sampling.
pub struct Evaluator<'a> {
    model: &'a ProcessModel,
    c: f64,
    grid: TimeGrid,
    mode: PathMode,
    kernels: RwLock<BTreeMap<Rational, Arc<Vec<DiscreteDistribution>>>>,
    ensembles: OnceLock<Result<Vec<TrajectoryEnsemble>>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a ProcessModel, c: f64, grid: &TimeGrid, mode: PathMode) -> Result<Self> {
        check_discount(c)?;
        Ok(Self {
            model,
            c,
            grid: grid.clone(),
            mode,
            kernels: RwLock::new(BTreeMap::new()),
            ensembles: OnceLock::new(),
        })
    }

    pub fn model(&self) -> &ProcessModel {
        self.model
    }

    pub fn discount(&self) -> f64 {
        self.c
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mode(&self) -> PathMode {
        self.mode
    }

    pub fn num_states(&self) -> usize {
        self.model.num_states()
    }

    /// `P_t(x)` for every `x`.
    pub fn kernels_at(&self, t: Rational) -> Result<Arc<Vec<DiscreteDistribution>>> {
        if let Some(k) = self.kernels.read().expect("kernel cache lock").get(&t) {
            return Ok(Arc::clone(k));
        }
        let rows = Arc::new(self.model.kernel_row_all(t)?);
        let mut cache = self.kernels.write().expect("kernel cache lock");
        Ok(Arc::clone(cache.entry(t).or_insert(rows)))
    }

    /// Path ensembles from every state over the evaluator's grid.
    pub fn ensembles(&self) -> Result<&[TrajectoryEnsemble]> {
        match self.ensembles.get_or_init(|| ensembles_for(self.model, &self.grid, self.mode)) {
            Ok(e) => Ok(e),
            Err(e) => Err(e.clone()),
        }
    }

    fn grid_index(&self, t: &Rational) -> Result<usize> {
        self.grid.index_of(t).ok_or_else(|| {
            Error::UnsupportedTime(format!("{} is not on the trajectory grid", display(t)))
        })
    }

    /// Values of `f` at every state.
    pub fn state_values(&self, f: &StateFormula) -> Result<Vec<f64>> {
        Ok(match f {
            StateFormula::Const(q) => vec![to_f64(q); self.num_states()],
            StateFormula::Obs => self.model.observable().values().to_vec(),
            StateFormula::Min(a, b) => {
                let (a, b) = (self.state_values(a)?, self.state_values(b)?);
                a.iter().zip(&b).map(|(u, v)| u.min(*v)).collect()
            }
            StateFormula::Neg(a) => negate(&self.state_values(a)?),
            StateFormula::MinusQ(a, q) => minus_q(&self.state_values(a)?, to_f64(q)),
            StateFormula::Diamond(t, a) => self.diamond(*t, &self.state_values(a)?)?,
            StateFormula::Integral(g) => self.integral(&self.path_values(g)?)?,
        })
    }

    /// Values of `g` on every trajectory of every ensemble.
    pub fn path_values(&self, g: &PathFormula) -> Result<PathValues> {
        Ok(match g {
            PathFormula::Eval(f, t) => self.eval_at(&self.state_values(f)?, *t)?,
            PathFormula::Min(a, b) => zip_paths(&self.path_values(a)?, &self.path_values(b)?, f64::min),
            PathFormula::Max(a, b) => zip_paths(&self.path_values(a)?, &self.path_values(b)?, f64::max),
            PathFormula::MinusQ(a, q) => {
                let q = to_f64(q);
                map_paths(&self.path_values(a)?, |v| (v - q).max(0.0))
            }
            PathFormula::PlusQ(a, q) => {
                let q = to_f64(q);
                map_paths(&self.path_values(a)?, |v| (v + q).min(1.0))
            }
        })
    }

    /// Value of `f` at state `x`.
    pub fn state_value(&self, f: &StateFormula, x: usize) -> Result<f64> {
        self.check_state(x)?;
        Ok(self.state_values(f)?[x])
    }

    /// Value of `g` on a single trajectory sampled on the evaluator's grid.
    pub fn traj_value(&self, g: &PathFormula, omega: &[usize]) -> Result<f64> {
        if omega.len() != self.grid.len() {
            return Err(Error::Shape(format!("trajectory of length {} on a grid of {} times", omega.len(), self.grid.len())));
        }
        for &x in omega {
            self.check_state(x)?;
        }
        self.traj_value_inner(g, omega)
    }

    fn traj_value_inner(&self, g: &PathFormula, omega: &[usize]) -> Result<f64> {
        Ok(match g {
            PathFormula::Eval(f, t) => {
                let k = self.grid_index(t)?;
                discount_factor(self.c, t) * self.state_value(f, omega[k])?
            }
            PathFormula::Min(a, b) => self.traj_value_inner(a, omega)?.min(self.traj_value_inner(b, omega)?),
            PathFormula::Max(a, b) => self.traj_value_inner(a, omega)?.max(self.traj_value_inner(b, omega)?),
            PathFormula::MinusQ(a, q) => (self.traj_value_inner(a, omega)? - to_f64(q)).max(0.0),
            PathFormula::PlusQ(a, q) => (self.traj_value_inner(a, omega)? + to_f64(q)).min(1.0),
        })
    }

    fn check_state(&self, x: usize) -> Result<()> {
        if x >= self.num_states() {
            return Err(Error::Shape(format!("state {x} out of range for {} states", self.num_states())));
        }
        Ok(())
    }

    /// `<t>` applied to a vector of state values.
    pub fn diamond(&self, t: Rational, values: &[f64]) -> Result<Vec<f64>> {
        let kernels = self.kernels_at(t)?;
        let d = discount_factor(self.c, &t);
        Ok(kernels.iter().map(|k| (d * k.expect(values)).clamp(0.0, 1.0)).collect())
    }

    /// `@ t` applied to a vector of state values.
    pub fn eval_at(&self, values: &[f64], t: Rational) -> Result<PathValues> {
        let k = self.grid_index(&t)?;
        let d = discount_factor(self.c, &t);
        Ok(self
            .ensembles()?
            .iter()
            .map(|e| e.trajectories().iter().map(|w| d * values[w[k]]).collect())
            .collect())
    }

    /// `int` applied to trajectory values.
    pub fn integral(&self, values: &PathValues) -> Result<Vec<f64>> {
        Ok(self
            .ensembles()?
            .iter()
            .zip(values)
            .map(|(e, v)| stable_sum(e.weights().iter().zip(v).map(|(w, v)| w * v)).clamp(0.0, 1.0))
            .collect())
    }
}

pub(crate) fn negate(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 - x).collect()
}

pub(crate) fn minus_q(v: &[f64], q: f64) -> Vec<f64> {
    v.iter().map(|x| (x - q).max(0.0)).collect()
}

pub(crate) fn zip_paths(a: &PathValues, b: &PathValues, op: fn(f64, f64) -> f64) -> PathValues {
    a.iter().zip(b).map(|(u, v)| u.iter().zip(v).map(|(x, y)| op(*x, *y)).collect()).collect()
}

pub(crate) fn map_paths(a: &PathValues, op: impl Fn(f64) -> f64) -> PathValues {
    a.iter().map(|u| u.iter().map(|&x| op(x)).collect()).collect()
}

/// Value of a state formula at `x`, with exact trajectory enumeration for `int`.
pub fn eval_state(f: &StateFormula, model: &ProcessModel, x: usize, c: f64, grid: &TimeGrid) -> Result<f64> {
    Evaluator::new(model, c, grid, PathMode::Exact)?.state_value(f, x)
}

/// Value of a trajectory formula on `omega`, a path sampled on `grid`.
pub fn eval_traj(g: &PathFormula, omega: &[usize], model: &ProcessModel, c: f64, grid: &TimeGrid) -> Result<f64> {
    Evaluator::new(model, c, grid, PathMode::Exact)?.traj_value(g, omega)
}
