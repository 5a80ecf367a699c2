//! Task kinds and their default experiment settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Long-horizon forecasting with MSE.
    Forecast,
    /// Short-horizon forecasting trained on SMAPE.
    ShortForecast,
    Imputation,
    Classification,
    Anomaly,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" | "long-term-forecast" => Ok(Task::Forecast),
            "short-forecast" | "short-term-forecast" => Ok(Task::ShortForecast),
            "impute" | "imputation" => Ok(Task::Imputation),
            "classify" | "classification" => Ok(Task::Classification),
            "anomaly" | "anomaly-detection" => Ok(Task::Anomaly),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}

/// Per-task model and optimizer defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDefaults {
    pub k: usize,
    pub layers: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Task {
    pub fn defaults(self) -> TaskDefaults {
        let row = |k, layers, d_min, d_max, learning_rate, loss, batch_size, epochs| TaskDefaults {
            k,
            layers,
            d_min,
            d_max,
            learning_rate,
            loss,
            batch_size,
            epochs,
        };
        match self {
            Task::Forecast => row(5, 2, 32, 512, 1e-4, LossKind::Mse, 32, 10),
            Task::ShortForecast => row(5, 2, 16, 64, 1e-3, LossKind::Smape, 16, 10),
            Task::Imputation => row(3, 2, 64, 128, 1e-3, LossKind::Mse, 16, 10),
            Task::Classification => row(3, 2, 32, 64, 1e-3, LossKind::CrossEntropy, 16, 30),
            Task::Anomaly => row(3, 3, 32, 128, 1e-4, LossKind::Mse, 128, 10),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let f = Task::Forecast.defaults();
        assert_eq!(
            (f.k, f.layers, f.d_min, f.d_max, f.batch_size, f.epochs),
            (5, 2, 32, 512, 32, 10)
        );
        assert_eq!(f.learning_rate, 1e-4);
        let i = Task::Imputation.defaults();
        assert_eq!(
            (i.k, i.layers, i.d_min, i.d_max, i.batch_size),
            (3, 2, 64, 128, 16)
        );
        assert_eq!(Task::ShortForecast.defaults().loss, LossKind::Smape);
        assert_eq!(Task::Classification.defaults().epochs, 30);
        assert_eq!(Task::Anomaly.defaults().layers, 3);
        assert_eq!("impute".parse::<Task>().unwrap(), Task::Imputation);
        assert!("regress".parse::<Task>().is_err());
    }
}
