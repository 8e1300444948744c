//! Hyperparameters and the `section.key=value` configuration file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{
    load_csv, load_idx, make_synthetic_pair, Dataset, Domain, ShiftSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nets::ModelDims;

/// Which optional loss terms take part in training. `L_c` is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossMask {
    pub hash: bool,
    pub centroid: bool,
    pub adversarial: bool,
    pub recon: bool,
}

impl LossMask {
    pub const ALL: LossMask = LossMask {
        hash: true,
        centroid: true,
        adversarial: true,
        recon: true,
    };
    pub const CLASSIFICATION_ONLY: LossMask = LossMask {
        hash: false,
        centroid: false,
        adversarial: false,
        recon: false,
    };

    /// Parses a comma list over `c,h,s,a,1` (also `l1`/`recon` etc.).
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = Self::CLASSIFICATION_ONLY;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_lowercase().as_str() {
                "c" | "lc" | "classification" => {}
                "h" | "lh" | "hash" => m.hash = true,
                "s" | "ls" | "centroid" => m.centroid = true,
                "a" | "la" | "adversarial" => m.adversarial = true,
                "1" | "l1" | "recon" => m.recon = true,
                other => return Err(Error::Config(format!("unknown loss term {other:?}"))),
            }
        }
        Ok(m)
    }

    pub fn uses_generators(&self) -> bool {
        self.adversarial || self.recon
    }
}

impl std::fmt::Display for LossMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = vec!["c"];
        for (on, tag) in [
            (self.centroid, "s"),
            (self.hash, "h"),
            (self.adversarial, "a"),
            (self.recon, "1"),
        ] {
            if on {
                parts.push(tag);
            }
        }
        f.write_str(&parts.join(","))
    }
}

/// Every scalar training knob.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta: f64,
    pub chi: f64,
    pub epsilon: f64,
    pub upsilon: f64,
    pub threshold: f64,
    pub lr: f64,
    /// Multiplier applied to `lr` at each stage boundary.
    pub lr_decay: f64,
    pub hash_bits: usize,
    /// `None` means `10 × classes`.
    pub batch_size: Option<usize>,
    pub pretrain_epochs: usize,
    pub stages: usize,
    pub epochs_per_stage: usize,
    pub d_steps: usize,
    pub seed: u64,
    pub terms: LossMask,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            chi: 0.5,
            epsilon: 0.1,
            upsilon: 0.01,
            threshold: 0.9,
            lr: 0.005,
            lr_decay: 0.5,
            hash_bits: 64,
            batch_size: None,
            pretrain_epochs: 20,
            stages: 3,
            epochs_per_stage: 30,
            d_steps: 1,
            seed: 0,
            terms: LossMask::ALL,
        }
    }
}

impl Hyperparams {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            chi: self.chi,
        }
    }

    pub fn batch_size_for(&self, classes: usize) -> usize {
        self.batch_size.unwrap_or(10 * classes)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("chi", self.chi),
            ("epsilon", self.epsilon),
            ("upsilon", self.upsilon),
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        if classes >= 2 {
            let lo = 1.0 / classes as f64;
            if !(self.threshold > lo && self.threshold < 1.0) {
                return Err(Error::Config(format!(
                    "threshold must lie in (1/N, 1) = ({lo}, 1), got {}",
                    self.threshold
                )));
            }
        }
        if self.hash_bits == 0 {
            return Err(Error::Config("hash_bits must be >= 1".into()));
        }
        let bs = self.batch_size_for(classes);
        if bs <= classes {
            return Err(Error::Config(format!(
                "batch size must be larger than the number of classes: batch_size={bs}, classes={classes}"
            )));
        }
        if self.stages == 0 {
            return Err(Error::Config("stages must be >= 1".into()));
        }
        if self.d_steps == 0 && self.terms.adversarial {
            return Err(Error::Config(
                "d_steps must be >= 1 when the adversarial term is on".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generate the default two-domain benchmark in memory.
    Synthetic {
        spec: SyntheticSpec,
        shift: ShiftSpec,
        seed: u64,
    },
    /// Source CSV (labelled) and target CSV (labels optional, evaluation only).
    Csv {
        source: PathBuf,
        target: PathBuf,
        target_has_labels: bool,
    },
    /// IDX image/label pairs for both domains.
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
        limit: Option<usize>,
    },
}

impl DataSource {
    /// Loads `(source, target)`. Target labels, when present, share the
    /// source's class ids and are meant for evaluation only.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let (source, target) = match self {
            DataSource::Synthetic { spec, shift, seed } => make_synthetic_pair(spec, shift, *seed)?,
            DataSource::Csv {
                source,
                target,
                target_has_labels,
            } => {
                let (s, smap) = load_csv(source, true, Domain::Source)?;
                let (t, tmap) = load_csv(target, *target_has_labels, Domain::Target)?;
                let labels = match t.labels() {
                    Some(l) => Some(
                        l.iter()
                            .map(|&k| {
                                let orig = tmap.original[k];
                                smap.original
                                    .iter()
                                    .position(|&o| o == orig)
                                    .ok_or_else(|| {
                                        Error::Config(format!(
                                            "target label {orig} does not occur in the source"
                                        ))
                                    })
                            })
                            .collect::<Result<Vec<_>>>()?,
                    ),
                    None => None,
                };
                let t = Dataset::new(
                    t.features().clone(),
                    labels,
                    s.num_classes(),
                    Domain::Target,
                )?;
                (s, t)
            }
            DataSource::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
                limit,
            } => {
                let s = load_idx(source_images, source_labels, *limit, Domain::Source)?;
                let t = load_idx(target_images, target_labels, *limit, Domain::Target)?;
                let n = s.num_classes().max(t.num_classes());
                let relabel = |d: &Dataset| {
                    Dataset::new(
                        d.features().clone(),
                        d.labels().map(<[usize]>::to_vec),
                        n,
                        d.domain(),
                    )
                };
                (relabel(&s)?, relabel(&t)?)
            }
        };
        if source.dim() != target.dim() {
            return Err(Error::shape(
                "source/target features",
                &[source.dim()],
                &[target.dim()],
            ));
        }
        Ok((source, target))
    }
}

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hp: Hyperparams,
    pub encoder_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let dims = ModelDims::new(1, 1, 2);
        Self {
            hp: Hyperparams::default(),
            encoder_hidden: dims.encoder_hidden,
            generator_hidden: dims.generator_hidden,
            discriminator_hidden: dims.discriminator_hidden,
            data: DataSource::Synthetic {
                spec: SyntheticSpec::default(),
                shift: ShiftSpec::default(),
                seed: 0,
            },
        }
    }
}

impl TrainConfig {
    pub fn model_dims(&self, input_dim: usize, classes: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hash_bits: self.hp.hash_bits,
            num_classes: classes,
            encoder_hidden: self.encoder_hidden.clone(),
            generator_hidden: self.generator_hidden.clone(),
            discriminator_hidden: self.discriminator_hidden.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `section.key=value` lines; `#` starts a comment. Relative data
    /// paths resolve against `base`. Unknown keys are rejected.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
            })?;
            kv.insert(k.trim().to_string(), (n + 1, v.trim().to_string()));
        }
        let mut cfg = TrainConfig::default();
        let mut spec = SyntheticSpec::default();
        let mut shift = ShiftSpec::default();
        let mut synth_seed = 0u64;
        let mut format = "synthetic".to_string();
        let mut paths: BTreeMap<&str, PathBuf> = BTreeMap::new();
        let mut target_has_labels = true;
        let mut limit = None;

        for (key, (line, v)) in &kv {
            let bad = |what: &str| Error::Config(format!("line {line}: {key}: {what}, got {v:?}"));
            let f = || v.parse::<f64>().map_err(|_| bad("expected a number"));
            let u = || {
                v.parse::<usize>()
                    .map_err(|_| bad("expected a non-negative integer"))
            };
            let list = || -> Result<Vec<usize>> {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| bad("expected a comma list of integers"))
                    })
                    .collect()
            };
            let path = || base.join(v);
            match key.as_str() {
                "loss.alpha" => cfg.hp.alpha = f()?,
                "loss.beta" => cfg.hp.beta = f()?,
                "loss.chi" => cfg.hp.chi = f()?,
                "loss.epsilon" => cfg.hp.epsilon = f()?,
                "loss.upsilon" => cfg.hp.upsilon = f()?,
                "loss.threshold" => cfg.hp.threshold = f()?,
                "loss.terms" => cfg.hp.terms = LossMask::parse(v)?,
                "train.lr" => cfg.hp.lr = f()?,
                "train.lr_decay" => cfg.hp.lr_decay = f()?,
                "train.batch_size" => cfg.hp.batch_size = Some(u()?),
                "train.pretrain_epochs" => cfg.hp.pretrain_epochs = u()?,
                "train.stages" => cfg.hp.stages = u()?,
                "train.epochs_per_stage" => cfg.hp.epochs_per_stage = u()?,
                "train.d_steps" => cfg.hp.d_steps = u()?,
                "train.seed" => cfg.hp.seed = v.parse().map_err(|_| bad("expected an integer"))?,
                "model.hash_bits" => cfg.hp.hash_bits = u()?,
                "model.encoder_hidden" => cfg.encoder_hidden = list()?,
                "model.generator_hidden" => cfg.generator_hidden = list()?,
                "model.discriminator_hidden" => cfg.discriminator_hidden = list()?,
                "data.format" => format = v.clone(),
                "data.source" => {
                    paths.insert("source", path());
                }
                "data.target" => {
                    paths.insert("target", path());
                }
                "data.source_images" => {
                    paths.insert("source_images", path());
                }
                "data.source_labels" => {
                    paths.insert("source_labels", path());
                }
                "data.target_images" => {
                    paths.insert("target_images", path());
                }
                "data.target_labels" => {
                    paths.insert("target_labels", path());
                }
                "data.target_has_labels" => {
                    target_has_labels = v.parse().map_err(|_| bad("expected true or false"))?
                }
                "data.limit" => limit = Some(u()?),
                "synthetic.classes" => spec.num_classes = u()?,
                "synthetic.per_class" => spec.per_class = u()?,
                "synthetic.dim" => spec.dim = u()?,
                "synthetic.sigma" => spec.sigma = f()?,
                "synthetic.radius" => spec.radius = f()?,
                "synthetic.phase_deg" => spec.phase = f()?.to_radians(),
                "synthetic.lift" => spec.lift = f()?,
                "synthetic.plane" => {
                    let p = list()?;
                    if p.len() != 2 {
                        return Err(bad("expected two axis indices"));
                    }
                    shift.plane = [p[0], p[1]];
                }
                "synthetic.rotation_deg" => shift.rotation = f()?.to_radians(),
                "synthetic.translation" => {
                    shift.translation = v
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<f64>()
                                .map_err(|_| bad("expected a comma list of numbers"))
                        })
                        .collect::<Result<_>>()?
                }
                "synthetic.scale" => shift.scale = f()?,
                "synthetic.noise" => shift.noise = f()?,
                "synthetic.seed" => {
                    synth_seed = v.parse().map_err(|_| bad("expected an integer"))?
                }
                _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
            }
        }

        let need = |paths: &BTreeMap<&str, PathBuf>, k: &str| {
            paths
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("data.format={format} needs data.{k}")))
        };
        cfg.data = match format.as_str() {
            "synthetic" => DataSource::Synthetic {
                spec,
                shift,
                seed: synth_seed,
            },
            "csv" => DataSource::Csv {
                source: need(&paths, "source")?,
                target: need(&paths, "target")?,
                target_has_labels,
            },
            "idx" => DataSource::Idx {
                source_images: need(&paths, "source_images")?,
                source_labels: need(&paths, "source_labels")?,
                target_images: need(&paths, "target_images")?,
                target_labels: need(&paths, "target_labels")?,
                limit,
            },
            other => return Err(Error::Config(format!("unknown data.format {other:?}"))),
        };
        Ok(cfg)
    }

    /// Canonical text form; parses back to an equal config (paths excepted).
    pub fn to_text(&self) -> String {
        let hp = &self.hp;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        writeln!(s, "loss.alpha={}", hp.alpha).unwrap();
        writeln!(s, "loss.beta={}", hp.beta).unwrap();
        writeln!(s, "loss.chi={}", hp.chi).unwrap();
        writeln!(s, "loss.epsilon={}", hp.epsilon).unwrap();
        writeln!(s, "loss.upsilon={}", hp.upsilon).unwrap();
        writeln!(s, "loss.threshold={}", hp.threshold).unwrap();
        writeln!(s, "loss.terms={}", hp.terms).unwrap();
        writeln!(s, "train.lr={}", hp.lr).unwrap();
        writeln!(s, "train.lr_decay={}", hp.lr_decay).unwrap();
        if let Some(b) = hp.batch_size {
            writeln!(s, "train.batch_size={b}").unwrap();
        }
        writeln!(s, "train.pretrain_epochs={}", hp.pretrain_epochs).unwrap();
        writeln!(s, "train.stages={}", hp.stages).unwrap();
        writeln!(s, "train.epochs_per_stage={}", hp.epochs_per_stage).unwrap();
        writeln!(s, "train.d_steps={}", hp.d_steps).unwrap();
        writeln!(s, "train.seed={}", hp.seed).unwrap();
        writeln!(s, "model.hash_bits={}", hp.hash_bits).unwrap();
        writeln!(s, "model.encoder_hidden={}", join(&self.encoder_hidden)).unwrap();
        writeln!(s, "model.generator_hidden={}", join(&self.generator_hidden)).unwrap();
        writeln!(
            s,
            "model.discriminator_hidden={}",
            join(&self.discriminator_hidden)
        )
        .unwrap();
        match &self.data {
            DataSource::Synthetic { spec, shift, seed } => {
                writeln!(s, "data.format=synthetic").unwrap();
                writeln!(s, "synthetic.classes={}", spec.num_classes).unwrap();
                writeln!(s, "synthetic.per_class={}", spec.per_class).unwrap();
                writeln!(s, "synthetic.dim={}", spec.dim).unwrap();
                writeln!(s, "synthetic.sigma={}", spec.sigma).unwrap();
                writeln!(s, "synthetic.radius={}", spec.radius).unwrap();
                writeln!(s, "synthetic.phase_deg={}", spec.phase.to_degrees()).unwrap();
                writeln!(s, "synthetic.lift={}", spec.lift).unwrap();
                writeln!(s, "synthetic.plane={},{}", shift.plane[0], shift.plane[1]).unwrap();
                writeln!(s, "synthetic.rotation_deg={}", shift.rotation.to_degrees()).unwrap();
                let t: Vec<String> = shift.translation.iter().map(f64::to_string).collect();
                writeln!(s, "synthetic.translation={}", t.join(",")).unwrap();
                writeln!(s, "synthetic.scale={}", shift.scale).unwrap();
                writeln!(s, "synthetic.noise={}", shift.noise).unwrap();
                writeln!(s, "synthetic.seed={seed}").unwrap();
            }
            DataSource::Csv {
                source,
                target,
                target_has_labels,
            } => {
                writeln!(s, "data.format=csv").unwrap();
                writeln!(s, "data.source={}", source.display()).unwrap();
                writeln!(s, "data.target={}", target.display()).unwrap();
                writeln!(s, "data.target_has_labels={target_has_labels}").unwrap();
            }
            DataSource::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
                limit,
            } => {
                writeln!(s, "data.format=idx").unwrap();
                writeln!(s, "data.source_images={}", source_images.display()).unwrap();
                writeln!(s, "data.source_labels={}", source_labels.display()).unwrap();
                writeln!(s, "data.target_images={}", target_images.display()).unwrap();
                writeln!(s, "data.target_labels={}", target_labels.display()).unwrap();
                if let Some(l) = limit {
                    writeln!(s, "data.limit={l}").unwrap();
                }
            }
        }
        s
    }
}
