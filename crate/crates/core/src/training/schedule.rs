//! Learning-rate halving and early stopping.
//!
//! Two independent monitors, matching the training protocol: the learning
//! rate halves when the *training loss* fails to improve on its running best
//! for `lr_patience` consecutive epochs (the counter resets on improvement
//! and on each halving), and training stops when the *monitored dev metric*
//! (higher is better) fails to improve for `stop_patience` consecutive
//! epochs. "Improvement" is strict.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleWatch {
    /// Halve on stalled training loss.
    TrainLoss,
    /// Halve on stalled dev loss instead.
    DevLoss,
}

#[derive(Debug, Clone, Copy)]
pub struct SchedulePolicy {
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: Option<usize>,
}

/// Mutable schedule state across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub best_loss: f64,
    pub loss_stall: usize,
    pub best_metric: f64,
    pub metric_stall: usize,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(initial_lr: f64) -> Self {
        TrainState {
            epoch: 0,
            lr: initial_lr,
            best_loss: f64::INFINITY,
            loss_stall: 0,
            best_metric: f64::NEG_INFINITY,
            metric_stall: 0,
            loss_history: Vec::new(),
        }
    }

    /// Feeds one epoch's watched loss and monitored dev metric; returns the
    /// learning rate to use next and whether to stop.
    pub fn schedule_step(
        &mut self,
        policy: &SchedulePolicy,
        watched_loss: f64,
        dev_metric: f64,
    ) -> (f64, bool) {
        self.epoch += 1;
        self.loss_history.push(watched_loss);

        if watched_loss < self.best_loss {
            self.best_loss = watched_loss;
            self.loss_stall = 0;
        } else {
            self.loss_stall += 1;
            if self.loss_stall >= policy.lr_patience {
                self.lr *= policy.lr_factor;
                self.loss_stall = 0;
            }
        }

        let mut stop = false;
        if dev_metric > self.best_metric {
            self.best_metric = dev_metric;
            self.metric_stall = 0;
        } else {
            self.metric_stall += 1;
            if let Some(patience) = policy.stop_patience {
                if self.metric_stall >= patience {
                    stop = true;
                }
            }
        }
        (self.lr, stop)
    }
}
