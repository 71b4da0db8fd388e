use crate::data::series::{FlowSeries, Normalizer};
use crate::error::{Error, Result};

/// One input/target pair cut from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    /// Index of the first input step in the source series.
    pub start: usize,
    pub nodes: usize,
    pub channels: usize,
    /// `T × N × C`, normalized.
    pub x: Vec<f32>,
    /// `T' × N × C`, raw scale.
    pub y: Vec<f32>,
    pub tod_in: Vec<usize>,
    pub dow_in: Vec<usize>,
    pub tod_out: Vec<usize>,
    pub dow_out: Vec<usize>,
}

impl SampleWindow {
    pub fn input_len(&self) -> usize {
        self.tod_in.len()
    }

    pub fn output_len(&self) -> usize {
        self.tod_out.len()
    }
}

/// Cuts every stride-1 window of `input_len` steps followed by `output_len`
/// steps. Inputs are normalized with the series' fitted statistics.
pub fn make_windows(series: &FlowSeries, input_len: usize, output_len: usize) -> Result<Vec<SampleWindow>> {
    let norm = series
        .normalizer()
        .ok_or_else(|| Error::Contract("normalizer must be fitted before windowing".into()))?;
    if input_len == 0 || output_len == 0 {
        return Err(Error::Param("window lengths must be positive".into()));
    }
    let span = input_len + output_len;
    let t_total = series.t_total();
    if t_total < span {
        return Err(Error::Size(format!(
            "series of {t_total} steps is shorter than one window ({input_len} + {output_len})"
        )));
    }
    let (nodes, channels) = (series.nodes(), series.channels());
    let cal = series.calendar();
    let windows = (0..=t_total - span)
        .map(|start| {
            let mut x = Vec::with_capacity(input_len * nodes * channels);
            for t in start..start + input_len {
                for (i, v) in series.step(t).iter().enumerate() {
                    x.push(norm.normalize(i % channels, *v as f64) as f32);
                }
            }
            let mut y = Vec::with_capacity(output_len * nodes * channels);
            for t in start + input_len..start + span {
                y.extend_from_slice(series.step(t));
            }
            let input = start..start + input_len;
            let output = start + input_len..start + span;
            SampleWindow {
                start,
                nodes,
                channels,
                x,
                y,
                tod_in: input.clone().map(|t| cal.time_of_day(t)).collect(),
                dow_in: input.map(|t| cal.day_of_week(t)).collect(),
                tod_out: output.clone().map(|t| cal.time_of_day(t)).collect(),
                dow_out: output.map(|t| cal.day_of_week(t)).collect(),
            }
        })
        .collect();
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Sizes of a contiguous 6:2:2 split of `n` samples.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 6 / 10;
    let val = n * 2 / 10;
    (train, val, n - train - val)
}

pub fn split_622(mut samples: Vec<SampleWindow>) -> Result<DatasetSplits> {
    if samples.len() < 5 {
        return Err(Error::Size(format!("{} samples cannot be split 6:2:2 (need at least 5)", samples.len())));
    }
    let (train, val, _) = split_sizes(samples.len());
    let test = samples.split_off(train + val);
    let val = samples.split_off(train);
    Ok(DatasetSplits { train: samples, val, test })
}

/// Historical average: the raw-scale mean of each node/channel over the
/// input window, repeated for every output step. Returns `T' × N × C`.
pub fn ha_baseline(window: &SampleWindow, normalizer: &Normalizer) -> Vec<f64> {
    let (n, c) = (window.nodes, window.channels);
    let t_in = window.input_len();
    let mut mean = vec![0.0f64; n * c];
    for step in window.x.chunks(n * c) {
        for (i, z) in step.iter().enumerate() {
            mean[i] += normalizer.denormalize(i % c, *z as f64);
        }
    }
    mean.iter_mut().for_each(|m| *m /= t_in as f64);
    mean.repeat(window.output_len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::series::Calendar;

    fn ramp(t: usize, n: usize, calendar: Calendar) -> FlowSeries {
        let values = (0..t * n).map(|v| v as f32).collect();
        let mut s = FlowSeries::new(values, t, n, 1, calendar).unwrap();
        s.fit_normalizer(0.6).unwrap();
        s
    }

    #[test]
    fn window_counts() {
        let s = ramp(30, 2, Calendar::five_minute());
        assert_eq!(make_windows(&s, 12, 12).unwrap().len(), 7);
        let s = ramp(24, 2, Calendar::five_minute());
        assert_eq!(make_windows(&s, 12, 12).unwrap().len(), 1);
        let s = ramp(23, 2, Calendar::five_minute());
        assert!(matches!(make_windows(&s, 12, 12), Err(Error::Size(_))));
    }

    #[test]
    fn unfitted_series_is_rejected() {
        let s = FlowSeries::new(vec![0.0; 30], 30, 1, 1, Calendar::five_minute()).unwrap();
        assert!(matches!(make_windows(&s, 12, 12), Err(Error::Contract(_))));
    }

    #[test]
    fn time_of_day_wraps_and_continues() {
        let s = ramp(30, 1, Calendar::new(288, 4, 287).unwrap());
        let w = &make_windows(&s, 12, 12).unwrap()[0];
        assert_eq!(w.tod_in[0], 287);
        assert_eq!(w.tod_in[1], 0);
        assert_eq!(w.dow_in[..2], [4, 5]);
        assert_eq!(w.tod_out[0], (w.tod_in[11] + 1) % 288);
    }

    #[test]
    fn targets_are_raw_and_inputs_invert() {
        let s = ramp(30, 2, Calendar::five_minute());
        let norm = s.normalizer().unwrap().clone();
        let windows = make_windows(&s, 3, 2).unwrap();
        let w = &windows[4];
        assert_eq!(w.y, s.values()[(4 + 3) * 2..(4 + 5) * 2]);
        for (i, z) in w.x.iter().enumerate() {
            let raw = norm.denormalize(0, *z as f64);
            assert!((raw - s.values()[4 * 2 + i] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn split_sizes_follow_floor_arithmetic() {
        assert_eq!(split_sizes(10), (6, 2, 2));
        assert_eq!(split_sizes(5), (3, 1, 1));
        let s = ramp(40, 1, Calendar::five_minute());
        let windows = make_windows(&s, 2, 2).unwrap();
        let n = windows.len();
        let splits = split_622(windows).unwrap();
        assert_eq!(splits.train.len() + splits.val.len() + splits.test.len(), n);
        assert!(splits.train.last().unwrap().start < splits.val[0].start);
        assert!(splits.val.last().unwrap().start < splits.test[0].start);
        let few = make_windows(&ramp(8, 1, Calendar::five_minute()), 2, 3).unwrap();
        assert_eq!(few.len(), 4);
        assert!(matches!(split_622(few), Err(Error::Size(_))));
    }

    #[test]
    fn historical_average() {
        let mut values = vec![0.0f32; 24];
        values[11] = 12.0;
        let mut s = FlowSeries::new(values, 24, 1, 1, Calendar::five_minute()).unwrap();
        s.set_normalizer(Normalizer::identity(1)).unwrap();
        let w = &make_windows(&s, 12, 12).unwrap()[0];
        let pred = ha_baseline(w, s.normalizer().unwrap());
        assert_eq!(pred, vec![1.0; 12]);

        let mut s = FlowSeries::new(vec![7.5; 20], 10, 2, 1, Calendar::five_minute()).unwrap();
        s.fit_normalizer(0.6).unwrap();
        let w = &make_windows(&s, 4, 3).unwrap()[1];
        let pred = ha_baseline(w, s.normalizer().unwrap());
        assert!(pred.iter().all(|p| (*p - 7.5).abs() < 1e-9));
    }
}
