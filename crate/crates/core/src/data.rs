use serde::{Deserialize, Serialize};

use crate::basis::check_points;
use crate::error::{Error, Result};

/// Observations `(X_i, Y_i)` with `X_i` in `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let dim = x.first().map(Vec::len).ok_or(Error::EmptyData)?;
        if dim == 0 {
            return Err(Error::InvalidInput("points must have at least one coordinate".into()));
        }
        check_points(&x, dim)?;
        if y.len() != x.len() {
            return Err(Error::InvalidInput(format!("{} responses for {} points", y.len(), x.len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("response {i} is not finite")));
        }
        Ok(Dataset { dim, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates() {
        assert!(matches!(Dataset::new(vec![], vec![]), Err(Error::EmptyData)));
        assert!(Dataset::new(vec![vec![0.5]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![vec![-0.5]], vec![1.0]).is_err());
        assert!(Dataset::new(vec![vec![0.5]], vec![f64::NAN]).is_err());
        assert_eq!(Dataset::new(vec![vec![0.5, 0.1]], vec![1.0]).unwrap().dim, 2);
    }
}
