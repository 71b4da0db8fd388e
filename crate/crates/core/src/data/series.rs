use log::warn;

use crate::error::{Error, Result};

/// Where a series sits on the clock: slots per day and the first slot's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calendar {
    pub steps_per_day: usize,
    /// 0 = Monday.
    pub start_day_of_week: usize,
    pub start_slot_of_day: usize,
}

impl Calendar {
    pub fn new(steps_per_day: usize, start_day_of_week: usize, start_slot_of_day: usize) -> Result<Self> {
        if steps_per_day == 0 {
            return Err(Error::Param("steps_per_day must be positive".into()));
        }
        if start_day_of_week >= 7 {
            return Err(Error::Param(format!("start_day_of_week {start_day_of_week} not in 0..7")));
        }
        if start_slot_of_day >= steps_per_day {
            return Err(Error::Param(format!(
                "start_slot_of_day {start_slot_of_day} not in 0..{steps_per_day}"
            )));
        }
        Ok(Calendar { steps_per_day, start_day_of_week, start_slot_of_day })
    }

    /// Five-minute slots starting Monday midnight.
    pub fn five_minute() -> Self {
        Calendar { steps_per_day: 288, start_day_of_week: 0, start_slot_of_day: 0 }
    }

    pub fn time_of_day(&self, t: usize) -> usize {
        (self.start_slot_of_day + t) % self.steps_per_day
    }

    pub fn day_of_week(&self, t: usize) -> usize {
        (self.start_day_of_week + (self.start_slot_of_day + t) / self.steps_per_day) % 7
    }
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Normalizer { mean: vec![0.0; channels], std: vec![1.0; channels], warnings: Vec::new() }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, channel: usize, x: f64) -> f64 {
        (x - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize(&self, channel: usize, z: f64) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }
}

/// Traffic values laid out `t → n → c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSeries {
    values: Vec<f32>,
    t_total: usize,
    nodes: usize,
    channels: usize,
    calendar: Calendar,
    normalizer: Option<Normalizer>,
}

impl FlowSeries {
    pub fn new(values: Vec<f32>, t_total: usize, nodes: usize, channels: usize, calendar: Calendar) -> Result<Self> {
        if t_total == 0 || nodes == 0 || channels == 0 {
            return Err(Error::Size(format!(
                "series dimensions must be positive, got {t_total}x{nodes}x{channels}"
            )));
        }
        let expected = t_total * nodes * channels;
        if values.len() != expected {
            return Err(Error::Size(format!(
                "{} values for a {t_total}x{nodes}x{channels} series (expected {expected})",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite value at flat index {i}")));
        }
        Ok(FlowSeries { values, t_total, nodes, channels, calendar, normalizer: None })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn calendar(&self) -> Calendar {
        self.calendar
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.t_total, self.nodes, self.channels)
    }

    pub fn get(&self, t: usize, n: usize, c: usize) -> f32 {
        self.values[(t * self.nodes + n) * self.channels + c]
    }

    /// Values of one time step, `n → c`.
    pub fn step(&self, t: usize) -> &[f32] {
        let w = self.nodes * self.channels;
        &self.values[t * w..(t + 1) * w]
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    /// Fits per-channel mean and population std on the first
    /// `floor(train_fraction * T_total)` steps and stores them on the series.
    pub fn fit_normalizer(&mut self, train_fraction: f64) -> Result<&Normalizer> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(Error::Param(format!("train_fraction {train_fraction} not in (0, 1]")));
        }
        let steps = (train_fraction * self.t_total as f64).floor() as usize;
        if steps == 0 {
            return Err(Error::Size(format!(
                "training portion of a {}-step series is empty",
                self.t_total
            )));
        }
        let c = self.channels;
        let count = (steps * self.nodes) as f64;
        let mut mean = vec![0.0f64; c];
        for t in 0..steps {
            for (i, v) in self.step(t).iter().enumerate() {
                mean[i % c] += *v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0f64; c];
        for t in 0..steps {
            for (i, v) in self.step(t).iter().enumerate() {
                let d = *v as f64 - mean[i % c];
                var[i % c] += d * d;
            }
        }
        let mut warnings = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(ch, v)| {
                let s = (v / count).sqrt();
                if s > 0.0 {
                    s
                } else {
                    let msg = format!("channel {ch} has zero variance on the training portion; std set to 1");
                    warn!("{msg}");
                    warnings.push(msg);
                    1.0
                }
            })
            .collect();
        self.normalizer = Some(Normalizer { mean, std, warnings });
        Ok(self.normalizer.as_ref().unwrap())
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        if normalizer.channels() != self.channels {
            return Err(Error::Size(format!(
                "normalizer has {} channels, series has {}",
                normalizer.channels(),
                self.channels
            )));
        }
        self.normalizer = Some(normalizer);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f32], t: usize, n: usize, c: usize) -> FlowSeries {
        FlowSeries::new(values.to_vec(), t, n, c, Calendar::five_minute()).unwrap()
    }

    #[test]
    fn population_std_on_training_prefix() {
        // 5 steps, prefix of floor(0.6 * 5) = 3 steps holds {1, 2, 3}; the tail is ignored.
        let mut s = series(&[1.0, 2.0, 3.0, 100.0, -100.0], 5, 1, 1);
        let norm = s.fit_normalizer(0.6).unwrap();
        assert!((norm.mean[0] - 2.0).abs() < 1e-12);
        assert!((norm.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((norm.std[0] - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn constant_channel_falls_back_to_unit_std() {
        let mut s = series(&[4.0, 1.0, 4.0, 2.0, 4.0, 3.0], 3, 1, 2);
        let norm = s.fit_normalizer(1.0).unwrap().clone();
        assert_eq!(norm.std[0], 1.0);
        assert_eq!(norm.warnings.len(), 1);
        assert_eq!(norm.normalize(0, 4.0), 0.0);
        assert!(norm.std[1] > 0.0 && norm.std[1] != 1.0);
    }

    #[test]
    fn calendar_wraps_days_and_weeks() {
        let cal = Calendar::new(288, 6, 287).unwrap();
        assert_eq!(cal.time_of_day(0), 287);
        assert_eq!(cal.time_of_day(1), 0);
        assert_eq!(cal.day_of_week(0), 6);
        assert_eq!(cal.day_of_week(1), 0);
        assert!(Calendar::new(288, 7, 0).is_err());
        assert!(Calendar::new(288, 0, 288).is_err());
    }

    #[test]
    fn rejects_bad_shapes_and_non_finite_values() {
        assert!(FlowSeries::new(vec![0.0; 3], 2, 1, 1, Calendar::five_minute()).is_err());
        assert!(FlowSeries::new(vec![], 0, 1, 1, Calendar::five_minute()).is_err());
        assert!(FlowSeries::new(vec![f32::NAN], 1, 1, 1, Calendar::five_minute()).is_err());
    }
}
