//! Synthetic indoor-localisation scenarios, CSV interchange and splits.
//!
//! A target moves along a Lissajous curve inside a rectangular room with
//! access points in the corners. Each sample carries per-AP range, bearing
//! and received-signal-strength features with configurable noise and
//! positively biased multipath range outliers.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Split, TrainData};
use crate::rng;

/// Which features the generator emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLayout {
    /// Range, bearing and RSS for every AP.
    Full,
    /// Bearings from AP0 and AP1, ranges to AP0..AP3 and the RSS of AP0.
    Wifi7,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub room_width_m: f64,
    pub room_height_m: f64,
    pub aps: Vec<[f64; 2]>,
    pub lissajous_a: f64,
    pub lissajous_b: f64,
    pub n_samples: usize,
    pub sigma_range_m: f64,
    pub sigma_angle_rad: f64,
    pub sigma_shadow_db: f64,
    pub multipath_prob: f64,
    pub path_loss_exponent: f64,
    pub rss_at_ref_dbm: f64,
    pub ref_distance_m: f64,
    pub layout: FeatureLayout,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let (w, h) = (10.0, 8.0);
        ScenarioConfig {
            room_width_m: w,
            room_height_m: h,
            aps: vec![[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]],
            lissajous_a: 3.0,
            lissajous_b: 2.0,
            n_samples: 2000,
            sigma_range_m: 0.1,
            sigma_angle_rad: 0.05,
            sigma_shadow_db: 2.0,
            multipath_prob: 0.05,
            path_loss_exponent: 2.5,
            rss_at_ref_dbm: -40.0,
            ref_distance_m: 1.0,
            layout: FeatureLayout::Full,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Default room with every noise source switched off.
    pub fn noiseless() -> Self {
        ScenarioConfig {
            sigma_range_m: 0.0,
            sigma_angle_rad: 0.0,
            sigma_shadow_db: 0.0,
            multipath_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.room_width_m) {
            return Err(Error::config("room_width_m", "must be positive"));
        }
        if !positive(self.room_height_m) {
            return Err(Error::config("room_height_m", "must be positive"));
        }
        if self.aps.is_empty() {
            return Err(Error::config("aps", "at least one access point is required"));
        }
        for ap in &self.aps {
            let inside = (0.0..=self.room_width_m).contains(&ap[0]) && (0.0..=self.room_height_m).contains(&ap[1]);
            if !inside {
                return Err(Error::config("aps", format!("AP {ap:?} lies outside the room")));
            }
        }
        if self.layout == FeatureLayout::Wifi7 && self.aps.len() < 4 {
            return Err(Error::config("layout", "wifi7 layout needs at least 4 APs"));
        }
        for (field, v) in [
            ("sigma_range_m", self.sigma_range_m),
            ("sigma_angle_rad", self.sigma_angle_rad),
            ("sigma_shadow_db", self.sigma_shadow_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.multipath_prob) {
            return Err(Error::config("multipath_prob", "must lie in [0, 1]"));
        }
        if !positive(self.lissajous_a) || !positive(self.lissajous_b) {
            return Err(Error::config("lissajous_a", "frequencies must be positive"));
        }
        if !positive(self.ref_distance_m) {
            return Err(Error::config("ref_distance_m", "must be positive"));
        }
        if !self.path_loss_exponent.is_finite() || !self.rss_at_ref_dbm.is_finite() {
            return Err(Error::config("path_loss_exponent", "must be finite"));
        }
        Ok(())
    }

    /// Point on the trajectory for phase `t` in `[0, 2π)`. The curve spans
    /// 80 % of the room around its centre.
    pub fn trajectory(&self, t: f64) -> [f64; 2] {
        let (cx, cy) = (self.room_width_m / 2.0, self.room_height_m / 2.0);
        [
            cx + 0.4 * self.room_width_m * (self.lissajous_a * t + PI / 2.0).sin(),
            cy + 0.4 * self.room_height_m * (self.lissajous_b * t).sin(),
        ]
    }

    pub fn feature_names(&self) -> Vec<String> {
        match self.layout {
            FeatureLayout::Full => (0..self.aps.len())
                .flat_map(|i| [format!("range_ap{i}"), format!("bearing_ap{i}"), format!("rss_ap{i}")])
                .collect(),
            FeatureLayout::Wifi7 => vec![
                "bearing_ap0".into(),
                "bearing_ap1".into(),
                "range_ap0".into(),
                "range_ap1".into(),
                "range_ap2".into(),
                "range_ap3".into(),
                "rss_ap0".into(),
            ],
        }
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta - 2.0 * PI * ((theta - PI) / (2.0 * PI)).ceil();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalisationDataset {
    pub features: Array2<f64>,
    /// `(x, y)` positions in metres.
    pub labels: Array2<f64>,
    pub feature_names: Vec<String>,
    pub split: Option<SplitIndices>,
}

struct ApReading {
    range: f64,
    bearing: f64,
    rss: f64,
}

pub fn generate_synthetic(cfg: &ScenarioConfig) -> Result<LocalisationDataset> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let names = cfg.feature_names();
    let n = cfg.n_samples;
    let mut features = Array2::zeros((n, names.len()));
    let mut labels = Array2::zeros((n, 2));
    for i in 0..n {
        let t = r.random::<f64>() * 2.0 * PI;
        let pos = cfg.trajectory(t);
        labels[(i, 0)] = pos[0];
        labels[(i, 1)] = pos[1];
        let readings: Vec<ApReading> = cfg
            .aps
            .iter()
            .map(|ap| {
                let (dx, dy) = (pos[0] - ap[0], pos[1] - ap[1]);
                let d = dx.hypot(dy);
                let z: f64 = unit.sample(&mut r);
                let range = if r.random::<f64>() < cfg.multipath_prob {
                    d + (3.0 * cfg.sigma_range_m * z).abs()
                } else {
                    d + cfg.sigma_range_m * z
                };
                let bearing = wrap_angle(dy.atan2(dx) + cfg.sigma_angle_rad * unit.sample(&mut r));
                let ratio = (d / cfg.ref_distance_m).max(1e-3);
                let rss = cfg.rss_at_ref_dbm - 10.0 * cfg.path_loss_exponent * ratio.log10()
                    + cfg.sigma_shadow_db * unit.sample(&mut r);
                ApReading { range, bearing, rss }
            })
            .collect();
        let row: Vec<f64> = match cfg.layout {
            FeatureLayout::Full => readings.iter().flat_map(|a| [a.range, a.bearing, a.rss]).collect(),
            FeatureLayout::Wifi7 => vec![
                readings[0].bearing,
                readings[1].bearing,
                readings[0].range,
                readings[1].range,
                readings[2].range,
                readings[3].range,
                readings[0].rss,
            ],
        };
        features.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    Ok(LocalisationDataset {
        features,
        labels,
        feature_names: names,
        split: None,
    })
}

impl LocalisationDataset {
    pub fn len(&self) -> usize {
        self.labels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x_m,y_m");
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (label, row) in self.labels.rows().into_iter().zip(self.features.rows()) {
            let _ = write!(out, "{:?},{:?}", label[0], label[1]);
            for v in row {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line as usize,
            msg,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| perr(1, e.to_string()))?.clone();
        if header.len() < 2 || &header[0] != "x_m" || &header[1] != "y_m" {
            return Err(perr(1, "header must start with `x_m,y_m`".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let width = header.len();
        let mut values = Vec::new();
        let mut rows = 0;
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                perr(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != width {
                return Err(perr(line, format!("expected {width} columns, found {}", record.len())));
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| perr(line, format!("`{field}` is not a number")))?;
                if !v.is_finite() {
                    return Err(perr(line, format!("non-finite value `{field}`")));
                }
                values.push(v);
            }
            rows += 1;
        }
        let all = Array2::from_shape_vec((rows, width), values).expect("row widths checked");
        Ok(LocalisationDataset {
            labels: all.slice(ndarray::s![.., ..2]).to_owned(),
            features: all.slice(ndarray::s![.., 2..]).to_owned(),
            feature_names: names,
            split: None,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, path)
    }

    /// Seeded shuffle then partition into train/validation/test.
    pub fn split(mut self, ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios {ratios:?} must be positive and sum to 1")));
        }
        let n = self.len();
        let n_train = (n as f64 * ratios[0]).round() as usize;
        let n_val = ((n as f64 * ratios[1]).round() as usize).min(n.saturating_sub(n_train));
        let n_test = n - n_train - n_val;
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::invalid(format!(
                "{n} samples give an empty split ({n_train}/{n_val}/{n_test})"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::seeded(seed));
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        self.split = Some(SplitIndices { train: idx, val, test });
        Ok(self)
    }

    pub fn split_default(self, seed: u64) -> Result<Self> {
        self.split([0.7, 0.15, 0.15], seed)
    }

    fn subset(&self, idx: &[usize]) -> Split {
        Split {
            features: self.features.select(Axis(0), idx),
            labels: self.labels.select(Axis(0), idx),
        }
    }

    /// Raw (unprocessed) feature matrices per split.
    pub fn partitions(&self) -> Result<TrainData> {
        let s = self
            .split
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has not been split"))?;
        Ok(TrainData {
            train: self.subset(&s.train),
            val: self.subset(&s.val),
            test: self.subset(&s.test),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(layout: FeatureLayout, n: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_samples: n,
            layout,
            ..ScenarioConfig::noiseless()
        }
    }

    #[test]
    fn noiseless_ranges_are_exact() {
        let cfg = small(FeatureLayout::Full, 200);
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.n_features(), 12);
        for (label, row) in ds.labels.rows().into_iter().zip(ds.features.rows()) {
            for (k, ap) in cfg.aps.iter().enumerate() {
                let d = (label[0] - ap[0]).hypot(label[1] - ap[1]);
                assert!((row[3 * k] - d).abs() < 1e-12);
            }
            assert!((0.0..=cfg.room_width_m).contains(&label[0]));
            assert!((0.0..=cfg.room_height_m).contains(&label[1]));
        }
    }

    #[test]
    fn centre_of_square_room_is_equidistant() {
        let cfg = ScenarioConfig {
            room_width_m: 6.0,
            room_height_m: 6.0,
            aps: vec![[0.0, 0.0], [6.0, 0.0], [6.0, 6.0], [0.0, 6.0]],
            ..ScenarioConfig::noiseless()
        };
        let c = [3.0, 3.0];
        let d: Vec<f64> = cfg.aps.iter().map(|a| (c[0] - a[0]).hypot(c[1] - a[1])).collect();
        assert!(d.iter().all(|v| (v - d[0]).abs() < 1e-12));
        let p = cfg.trajectory(0.0);
        assert_eq!(p[1], 3.0);
    }

    #[test]
    fn range_noise_has_configured_spread() {
        let cfg = ScenarioConfig {
            n_samples: 10_000,
            sigma_range_m: 0.1,
            ..ScenarioConfig::noiseless()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let errs: Vec<f64> = ds
            .labels
            .rows()
            .into_iter()
            .zip(ds.features.rows())
            .map(|(l, f)| f[0] - l[0].hypot(l[1]))
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn multipath_only_lengthens_ranges() {
        let cfg = ScenarioConfig {
            n_samples: 500,
            sigma_range_m: 0.2,
            multipath_prob: 1.0,
            ..ScenarioConfig::noiseless()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for (l, f) in ds.labels.rows().into_iter().zip(ds.features.rows()) {
            assert!(f[0] >= l[0].hypot(l[1]) - 1e-12);
        }
    }

    #[test]
    fn bearings_are_wrapped() {
        let cfg = ScenarioConfig {
            n_samples: 2000,
            sigma_angle_rad: 3.0,
            ..ScenarioConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for k in 0..4 {
            assert!(ds.features.column(3 * k + 1).iter().all(|b| *b > -PI && *b <= PI));
        }
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ScenarioConfig::default();
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let wifi = generate_synthetic(&small(FeatureLayout::Wifi7, 10)).unwrap();
        assert_eq!(wifi.n_features(), 7);
    }

    #[test]
    fn invalid_room_names_field() {
        let cfg = ScenarioConfig {
            room_width_m: -1.0,
            ..ScenarioConfig::default()
        };
        match generate_synthetic(&cfg).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "room_width_m"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let ds = generate_synthetic(&ScenarioConfig {
            n_samples: 100,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let back = LocalisationDataset::from_csv_str(&ds.to_csv_string(), Path::new("d.csv")).unwrap();
        assert_eq!(back, ds);

        let header_only = "x_m,y_m,a,b\n";
        let empty = LocalisationDataset::from_csv_str(header_only, Path::new("d.csv")).unwrap();
        assert_eq!(empty.len(), 0);
        assert_eq!(empty.feature_names, vec!["a", "b"]);

        let mut text = String::from("x_m,y_m,a\n");
        for i in 0..6 {
            text.push_str(&format!("{i},1,2\n"));
        }
        let mut bad = text.clone();
        bad.push_str("7,1\n");
        match LocalisationDataset::from_csv_str(&bad, Path::new("d.csv")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 8),
            other => panic!("{other}"),
        }
        let mut missing = String::from("x_m,y_m,a\n");
        for i in 0..5 {
            missing.push_str(&format!("{i},1,2\n"));
        }
        missing.push_str("5,1\n");
        match LocalisationDataset::from_csv_str(&missing, Path::new("d.csv")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 7),
            other => panic!("{other}"),
        }
        let nan = "x_m,y_m,a\n1,2,NaN\n";
        assert!(LocalisationDataset::from_csv_str(nan, Path::new("d.csv")).is_err());
        assert!(LocalisationDataset::from_csv_str("a,b\n", Path::new("d.csv")).is_err());
    }

    #[test]
    fn default_split_sizes() {
        let ds = generate_synthetic(&small(FeatureLayout::Full, 100)).unwrap();
        let s = ds.clone().split_default(3).unwrap().split.unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        assert_eq!(ds.clone().split_default(3).unwrap().split.unwrap(), s);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());

        let tiny = generate_synthetic(&small(FeatureLayout::Full, 3)).unwrap();
        assert!(tiny.split_default(0).is_err());
        assert!(ds.clone().split([0.5, 0.5, 0.1], 0).is_err());
        let parts = ds.split_default(1).unwrap().partitions().unwrap();
        assert_eq!(parts.train.len(), 70);
    }
}
