use serde::{Deserialize, Serialize};

use super::{dist, sub};
use crate::error::{Error, Result};

/// Feasible set of a client's lower-level problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSpec {
    #[default]
    Unconstrained,
    /// `{y : ||y - anchor|| <= radius}`
    BallAroundAnchor {
        radius: f64,
    },
    /// `{y : y >= 0}`; the anchor is ignored.
    NonnegativeOrthant,
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ConstraintSpec::BallAroundAnchor { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(Error::param(format!("ball radius must be positive, got {radius}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether `point` lies in the set, up to `tol`.
    pub fn contains(&self, point: &[f64], anchor: &[f64], tol: f64) -> bool {
        match *self {
            ConstraintSpec::Unconstrained => true,
            ConstraintSpec::BallAroundAnchor { radius } => dist(point, anchor) <= radius + tol,
            ConstraintSpec::NonnegativeOrthant => point.iter().all(|&v| v >= -tol),
        }
    }

    /// Project in place.
    pub fn project_in_place(&self, point: &mut [f64], anchor: &[f64]) {
        match *self {
            ConstraintSpec::Unconstrained => {}
            ConstraintSpec::BallAroundAnchor { radius } => {
                let d = dist(point, anchor);
                if d > radius {
                    let s = radius / d;
                    for (p, &a) in point.iter_mut().zip(anchor) {
                        *p = a + s * (*p - a);
                    }
                }
            }
            ConstraintSpec::NonnegativeOrthant => {
                point.iter_mut().for_each(|p| *p = p.max(0.0));
            }
        }
    }
}

/// Euclidean projection of `point` onto the set described by `spec` anchored at `anchor`.
pub fn project(point: &[f64], spec: &ConstraintSpec, anchor: &[f64]) -> Result<Vec<f64>> {
    if point.len() != anchor.len() {
        return Err(Error::dim(format!(
            "point has dim {}, anchor has dim {}",
            point.len(),
            anchor.len()
        )));
    }
    spec.validate()?;
    let mut out = point.to_vec();
    spec.project_in_place(&mut out, anchor);
    Ok(out)
}

/// Distance moved by a projection; zero iff the point was feasible.
pub fn projection_residual(point: &[f64], spec: &ConstraintSpec, anchor: &[f64]) -> Result<f64> {
    let p = project(point, spec, anchor)?;
    Ok(super::norm(&sub(point, &p)))
}
