//! Experiment configuration as flat `section.key = value` text.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::{load_dataset, save_dataset, Dataset, Domain};
use crate::scenegen::{generate_dataset, preset_source, preset_target, DomainParams};
use crate::segnet::{PropertyConfig, Regime, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub source: DomainParams,
    pub target: DomainParams,
    pub width: usize,
    pub height: usize,
    pub n_source: usize,
    /// Unlabeled target images used for adaptation.
    pub n_target: usize,
    /// Labeled target images used only for evaluation.
    pub n_val: usize,
    pub properties: PropertyConfig,
    /// Settings shared by the adapted regimes; `regime` is ignored.
    pub train: TrainConfig,
    /// Source batch size of the NoAdapt baseline.
    pub noadapt_batch_source: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: preset_source(),
            target: preset_target(),
            width: 64,
            height: 64,
            n_source: 200,
            n_target: 100,
            n_val: 100,
            properties: PropertyConfig::default(),
            train: TrainConfig::for_regime(Regime::ImageSuperpixel),
            noadapt_batch_source: 15,
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Dataset splits generated from one configuration.
pub const SPLITS: [(&str, Domain); 3] = [
    ("source", Domain::Source),
    ("target", Domain::Target),
    ("val", Domain::Target),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl ExperimentConfig {
    /// Defaults overridden by the lines of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(rest) = key.strip_prefix("source.") {
            if self.source.set(rest, value)? {
                return Ok(());
            }
        }
        if let Some(rest) = key.strip_prefix("target.") {
            if self.target.set(rest, value)? {
                return Ok(());
            }
        }
        let p = &mut self.properties;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "output.dir" => self.output_dir = PathBuf::from(value),
            "data.width" => self.width = parse(key, value)?,
            "data.height" => self.height = parse(key, value)?,
            "data.n_source" => self.n_source = parse(key, value)?,
            "data.n_target" => self.n_target = parse(key, value)?,
            "data.n_val" => self.n_val = parse(key, value)?,
            "estimator.kind" => p.estimator = value.parse()?,
            "estimator.knn_k" => p.knn_k = parse(key, value)?,
            "estimator.zscore" => p.zscore = parse_bool(key, value)?,
            "lr.epochs" => p.logreg.epochs = parse(key, value)?,
            "lr.learning_rate" => p.logreg.lr = parse(key, value)?,
            "lr.l2" => p.logreg.l2 = parse(key, value)?,
            "lr.batch_size" => p.logreg.batch_size = parse(key, value)?,
            "superpix.k" => p.slic.k = parse(key, value)?,
            "superpix.compactness" => p.slic.compactness = parse(key, value)?,
            "superpix.iters" => p.slic.iters = parse(key, value)?,
            "superpix.fraction" => p.fraction = parse(key, value)?,
            "superpix.confidence" => p.confidence = value.parse()?,
            "superpix.temperature" => p.temperature = parse(key, value)?,
            "svm.epochs" => p.svm.epochs = parse(key, value)?,
            "svm.lambda" => p.svm.lambda = parse(key, value)?,
            "train.gamma" => t.gamma = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_source" => t.batch_source = parse(key, value)?,
            "train.batch_target" => t.batch_target = parse(key, value)?,
            "train.noadapt_batch_source" => self.noadapt_batch_source = parse(key, value)?,
            "train.rho" => t.rho = parse(key, value)?,
            "train.eps" => t.eps = parse(key, value)?,
            "train.w_image" => t.w_image = parse(key, value)?,
            "train.w_superpixel" => t.w_superpixel = parse(key, value)?,
            "train.arch" => t.arch = value.to_string(),
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let p = &self.properties;
        let t = &self.train;
        let mut kv: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("output.dir".into(), self.output_dir.display().to_string()),
            ("data.width".into(), self.width.to_string()),
            ("data.height".into(), self.height.to_string()),
            ("data.n_source".into(), self.n_source.to_string()),
            ("data.n_target".into(), self.n_target.to_string()),
            ("data.n_val".into(), self.n_val.to_string()),
        ];
        kv.extend(self.source.to_kv("source."));
        kv.extend(self.target.to_kv("target."));
        let rest: [(&str, String); 25] = [
            ("estimator.kind", p.estimator.to_string()),
            ("estimator.knn_k", p.knn_k.to_string()),
            ("estimator.zscore", p.zscore.to_string()),
            ("lr.epochs", p.logreg.epochs.to_string()),
            ("lr.learning_rate", p.logreg.lr.to_string()),
            ("lr.l2", p.logreg.l2.to_string()),
            ("lr.batch_size", p.logreg.batch_size.to_string()),
            ("superpix.k", p.slic.k.to_string()),
            ("superpix.compactness", p.slic.compactness.to_string()),
            ("superpix.iters", p.slic.iters.to_string()),
            ("superpix.fraction", p.fraction.to_string()),
            ("superpix.confidence", p.confidence.to_string()),
            ("superpix.temperature", p.temperature.to_string()),
            ("svm.epochs", p.svm.epochs.to_string()),
            ("svm.lambda", p.svm.lambda.to_string()),
            ("train.gamma", t.gamma.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_source", t.batch_source.to_string()),
            ("train.batch_target", t.batch_target.to_string()),
            (
                "train.noadapt_batch_source",
                self.noadapt_batch_source.to_string(),
            ),
            ("train.rho", t.rho.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.w_image", t.w_image.to_string()),
            ("train.w_superpixel", t.w_superpixel.to_string()),
            ("train.arch", t.arch.clone()),
        ];
        kv.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        kv
    }

    /// Canonical text form; parses back to an equal configuration.
    pub fn to_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text without `output.dir`, hex encoded.
    /// Results never depend on where they are written.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.to_kv().into_iter().filter(|(k, _)| k != "output.dir") {
            hasher.update(format!("{k}={v}\n").as_bytes());
        }
        let hash = hasher.finalize();
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        if self.source.num_classes != self.target.num_classes {
            return Err(Error::Config(
                "source and target disagree on num_classes".into(),
            ));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("images must be at least 16x16".into()));
        }
        if self.n_source == 0 || self.n_target == 0 || self.n_val == 0 {
            return Err(Error::Config("every split needs at least one image".into()));
        }
        if self.noadapt_batch_source == 0 {
            return Err(Error::Config(
                "train.noadapt_batch_source must be at least 1".into(),
            ));
        }
        self.train_config(Regime::ImageSuperpixel).validate()?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.source.num_classes
    }

    /// Training settings for `regime`, seeded from the experiment seed.
    pub fn train_config(&self, regime: Regime) -> TrainConfig {
        let mut t = TrainConfig {
            regime,
            seed: self.seed,
            ..self.train.clone()
        };
        if !regime.is_adapted() {
            t.batch_source = self.noadapt_batch_source;
            t.batch_target = 0;
        }
        t
    }

    pub fn property_config(&self) -> PropertyConfig {
        let mut p = self.properties.clone();
        p.logreg.seed = self.seed;
        p.svm.seed = self.seed;
        p
    }

    /// Base scene seed of split `index` (0 source, 1 target, 2 val).
    pub fn split_seed(&self, index: usize) -> u64 {
        self.seed
            .wrapping_mul(1_000_000)
            .wrapping_add(index as u64 * 100_000)
    }

    fn split_size(&self, index: usize) -> usize {
        [self.n_source, self.n_target, self.n_val][index]
    }

    /// Generates split `index` with ground-truth masks.
    pub fn generate_split(&self, index: usize) -> Result<Dataset> {
        let (_, domain) = SPLITS[index];
        let params = if domain == Domain::Source {
            &self.source
        } else {
            &self.target
        };
        generate_dataset(
            params,
            self.split_size(index),
            self.width,
            self.height,
            self.split_seed(index),
            domain,
        )
    }

    /// All three splits, freshly generated.
    pub fn generate_all(&self) -> Result<[Dataset; 3]> {
        self.validate()?;
        Ok([
            self.generate_split(0)?,
            self.generate_split(1)?,
            self.generate_split(2)?,
        ])
    }

    pub fn save_splits(&self, root: &Path, splits: &[Dataset; 3]) -> Result<()> {
        for ((name, _), ds) in SPLITS.iter().zip(splits) {
            save_dataset(ds, root, name)?;
        }
        Ok(())
    }

    pub fn load_split(&self, root: &Path, index: usize) -> Result<Dataset> {
        let (name, domain) = SPLITS[index];
        load_dataset(root, name, self.num_classes(), domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeldist::EstimatorKind;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("train.gamma", "0.3").unwrap();
        cfg.set("target.lighting_gain", "1.45").unwrap();
        cfg.set("estimator.kind", "knn").unwrap();
        cfg.set("superpix.confidence", "raw").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_eq!(back.properties.estimator, EstimatorKind::Knn);
        assert_ne!(ExperimentConfig::default().digest(), cfg.digest());
    }

    #[test]
    fn comments_and_errors() {
        let cfg = ExperimentConfig::parse("# comment\n\n data.width = 32 \nseed=4\n").unwrap();
        assert_eq!((cfg.width, cfg.seed), (32, 4));
        assert!(matches!(
            ExperimentConfig::parse("nonsense=1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("source.bogus=1"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::parse("data.width").is_err());
        assert!(ExperimentConfig::parse("data.width=abc").is_err());
        assert!(ExperimentConfig::parse("estimator.zscore=maybe").is_err());
    }

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.properties.slic.k, 100);
        assert_eq!(cfg.properties.fraction, 0.6);
        assert_eq!(cfg.train.gamma, 0.5);
        let noadapt = cfg.train_config(Regime::NoAdapt);
        assert_eq!((noadapt.batch_source, noadapt.batch_target), (15, 0));
        let adapted = cfg.train_config(Regime::Image);
        assert_eq!((adapted.batch_source, adapted.batch_target), (5, 5));
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let cfg = ExperimentConfig::parse(
            "data.width=16\ndata.height=16\ndata.n_source=2\ndata.n_target=2\ndata.n_val=2",
        )
        .unwrap();
        let a = cfg.generate_all().unwrap();
        let b = cfg.generate_all().unwrap();
        assert_eq!(a, b);
        assert_ne!(a[1].items[0].image, a[2].items[0].image);
        assert_eq!(a[0].domain, Domain::Source);
        assert_eq!(a[2].domain, Domain::Target);
    }
}
