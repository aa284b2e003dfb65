use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{self, format_list, parse_list, parse_value, KvEntry};
use crate::search::SearchMethod;

/// Total number of LAE-Conv layers: four encoder layers and three decoder
/// layers mirroring layers 3, 2 and 1.
pub const NUM_LAYERS: usize = 7;

/// Scene scale applied to the base radii `0.1, 0.2, 0.4, 0.8`.
pub const DEFAULT_SCENE_SCALE: f64 = 2.0;

/// Shape and hyperparameters of the segmentation network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Point counts of encoder levels 1..4, strictly decreasing.
    pub num_points: [usize; 4],
    /// Output widths of encoder layers 1..4.
    pub widths: [usize; 4],
    /// Output widths of decoder layers 5, 6, 7.
    pub decoder_widths: [usize; 3],
    /// Search radii of encoder layers 1..4; decoder layers reuse the radius
    /// of the level they run on.
    pub radii: [f64; 4],
    /// Neighbors per direction bin (`m`); every layer gathers `16·m`.
    pub points_per_bin: usize,
    pub search: SearchMethod,
    /// Layers (1..=7) followed by a spatial attention block.
    pub psa_layers: BTreeSet<usize>,
    pub num_classes: usize,
    /// 3 (xyz) or 6 (xyz + rgb).
    pub input_channels: usize,
    /// Largest block an attention layer accepts.
    pub psa_max_points: usize,
    /// Aggregate lifted offsets instead of lifted neighbor features.
    pub offset_aggregation: bool,
}

impl NetworkConfig {
    /// 512-point blocks, widths 32..256.
    pub fn desk(num_classes: usize) -> Self {
        let s = DEFAULT_SCENE_SCALE;
        Self {
            num_points: [512, 128, 64, 32],
            widths: [32, 64, 128, 256],
            decoder_widths: [128, 128, 64],
            radii: [0.1 * s, 0.2 * s, 0.4 * s, 0.8 * s],
            points_per_bin: 1,
            search: SearchMethod::MultiDirectional,
            psa_layers: [3, 4, 5].into_iter().collect(),
            num_classes,
            input_channels: 3,
            psa_max_points: 1024,
            offset_aggregation: false,
        }
    }

    /// 32-point blocks with widths 4..8, small enough for exhaustive
    /// finite-difference checks.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            num_points: [32, 16, 8, 4],
            widths: [4, 6, 8, 8],
            decoder_widths: [8, 8, 6],
            ..Self::desk(num_classes)
        }
    }

    /// Number of points each layer (1..=7) outputs.
    pub fn layer_points(&self, layer: usize) -> usize {
        match layer {
            1..=4 => self.num_points[layer - 1],
            5..=7 => self.num_points[7 - layer],
            _ => panic!("layer {layer} out of range"),
        }
    }

    /// Output width of layer 1..=7.
    pub fn layer_width(&self, layer: usize) -> usize {
        match layer {
            1..=4 => self.widths[layer - 1],
            5..=7 => self.decoder_widths[layer - 5],
            _ => panic!("layer {layer} out of range"),
        }
    }

    pub fn layer_radius(&self, layer: usize) -> f64 {
        match layer {
            1..=4 => self.radii[layer - 1],
            5..=7 => self.radii[7 - layer],
            _ => panic!("layer {layer} out of range"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_points[0] == 0 || self.num_points.windows(2).any(|w| w[1] >= w[0] || w[1] == 0) {
            return bad(format!("num_points must be positive and strictly decreasing, got {:?}", self.num_points));
        }
        if self.widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if self.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad(format!("radii must be positive, got {:?}", self.radii));
        }
        if self.points_per_bin == 0 {
            return bad("points_per_bin must be at least 1".into());
        }
        if let Some(&l) = self.psa_layers.iter().find(|&&l| !(1..=NUM_LAYERS).contains(&l)) {
            return bad(format!("psa layer {l} outside 1..={NUM_LAYERS}"));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if !matches!(self.input_channels, 3 | 6) {
            return bad(format!("input_channels must be 3 or 6, got {}", self.input_channels));
        }
        if let Some(&l) = self.psa_layers.iter().find(|&&l| self.layer_points(l) > self.psa_max_points) {
            return bad(format!(
                "attention after layer {l} sees {} points, above psa_max_points = {}",
                self.layer_points(l),
                self.psa_max_points
            ));
        }
        Ok(())
    }

    /// Keys understood by [`set`](Self::set), with a one-line description.
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("num_points", "points per encoder level, 4 values, strictly decreasing"),
        ("widths", "encoder layer widths, 4 values"),
        ("decoder_widths", "decoder layer widths (layers 5,6,7), 3 values"),
        ("radii", "encoder search radii in meters, 4 values"),
        ("points_per_bin", "neighbors per direction bin m; K = 16*m"),
        ("search", "neighbor search: multidir, knn or ball"),
        ("psa_layers", "layers followed by spatial attention, e.g. 3,4,5 (empty for none)"),
        ("num_classes", "number of semantic classes"),
        ("input_channels", "3 for xyz, 6 for xyz+rgb"),
        ("psa_max_points", "largest block an attention layer accepts"),
        ("offset_aggregation", "aggregate lifted offsets instead of neighbor features (true/false)"),
    ];

    /// Applies one `key = value` setting. Returns `Ok(false)` for keys that
    /// are not network keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn fixed<const N: usize, T: std::str::FromStr>(key: &str, value: &str) -> Result<[T; N]>
        where
            T::Err: std::fmt::Display,
        {
            let v: Vec<T> = parse_list(key, value)?;
            let n = v.len();
            v.try_into()
                .map_err(|_| Error::Config(format!("{key}: expected {N} values, got {n}")))
        }
        match key {
            "num_points" => self.num_points = fixed(key, value)?,
            "widths" => self.widths = fixed(key, value)?,
            "decoder_widths" => self.decoder_widths = fixed(key, value)?,
            "radii" => self.radii = fixed(key, value)?,
            "points_per_bin" => self.points_per_bin = parse_value(key, value)?,
            "search" => self.search = parse_value(key, value)?,
            "psa_layers" => self.psa_layers = parse_psa_layers(value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "input_channels" => self.input_channels = parse_value(key, value)?,
            "psa_max_points" => self.psa_max_points = parse_value(key, value)?,
            "offset_aggregation" => self.offset_aggregation = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Builds a config from the desk defaults plus `entries`; unknown keys
    /// are errors.
    pub fn from_entries(entries: &[KvEntry]) -> Result<Self> {
        let mut cfg = Self::desk(3);
        for e in entries {
            if !cfg.set(&e.key, &e.value)? {
                return Err(Error::Config(format!("unknown key {:?} on line {}", e.key, e.line)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "num_points = {}", format_list(self.num_points));
        let _ = writeln!(s, "widths = {}", format_list(self.widths));
        let _ = writeln!(s, "decoder_widths = {}", format_list(self.decoder_widths));
        let _ = writeln!(s, "radii = {}", format_list(self.radii));
        let _ = writeln!(s, "points_per_bin = {}", self.points_per_bin);
        let _ = writeln!(s, "search = {}", self.search);
        let _ = writeln!(s, "psa_layers = {}", format_list(&self.psa_layers));
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "input_channels = {}", self.input_channels);
        let _ = writeln!(s, "psa_max_points = {}", self.psa_max_points);
        let _ = writeln!(s, "offset_aggregation = {}", self.offset_aggregation);
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_entries(&kv::read_kv(path)?)
    }
}

/// Parses `3,4,5`, ranges like `2-6`, or an empty string / `none`.
pub fn parse_psa_layers(value: &str) -> Result<BTreeSet<usize>> {
    let value = value.trim();
    let mut out = BTreeSet::new();
    if value.is_empty() || value == "none" {
        return Ok(out);
    }
    for part in value.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = parse_value("psa_layers", a)?;
            let b: usize = parse_value("psa_layers", b)?;
            if a > b {
                return Err(Error::Config(format!("psa_layers: empty range {part:?}")));
            }
            out.extend(a..=b);
        } else {
            out.insert(parse_value("psa_layers", part)?);
        }
    }
    if let Some(&l) = out.iter().find(|&&l| !(1..=NUM_LAYERS).contains(&l)) {
        return Err(Error::Config(format!("psa layer {l} outside 1..={NUM_LAYERS}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        NetworkConfig::desk(3).validate().unwrap();
        NetworkConfig::tiny(3).validate().unwrap();
        let d = NetworkConfig::desk(3);
        assert_eq!(
            (1..=7).map(|l| d.layer_points(l)).collect::<Vec<_>>(),
            vec![512, 128, 64, 32, 64, 128, 512]
        );
        assert_eq!(d.layer_radius(5), d.layer_radius(3));
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = NetworkConfig::tiny(5);
        cfg.search = SearchMethod::BallQuery;
        cfg.psa_layers = [1, 7].into_iter().collect();
        let text = cfg.to_kv();
        let back = NetworkConfig::from_entries(&kv::parse_kv(&text, Path::new("x")).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let entries = kv::parse_kv("widths = 1,2,3,4\nwidht = 3\n", Path::new("x")).unwrap();
        let err = NetworkConfig::from_entries(&entries).unwrap_err().to_string();
        assert!(err.contains("widht"), "{err}");
    }

    #[test]
    fn psa_layer_syntax() {
        assert_eq!(parse_psa_layers("2-6").unwrap().into_iter().collect::<Vec<_>>(), vec![2, 3, 4, 5, 6]);
        assert!(parse_psa_layers("").unwrap().is_empty());
        assert!(parse_psa_layers("none").unwrap().is_empty());
        assert!(parse_psa_layers("0").is_err());
        assert!(parse_psa_layers("8").is_err());
    }

    #[test]
    fn validation_catches_bad_shapes() {
        let mut c = NetworkConfig::desk(3);
        c.num_points = [512, 512, 64, 32];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk(3);
        c.psa_max_points = 50;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::desk(3);
        c.input_channels = 4;
        assert!(c.validate().is_err());
    }
}
