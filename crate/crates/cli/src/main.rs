use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use dahash::data::{load_csv, load_idx, make_synthetic_pair, write_csv, Dataset, Domain, ShiftSpec, SyntheticSpec};
use dahash::hashindex::{binarize, load_codes, mean_average_precision, precision_at_k, save_codes, MapOptions, RetrievalIndex};
use dahash::nets::{load_model, save_model, Model};
use dahash::trainer::{
    evaluate_accuracy, random_grad_check, write_metrics_csv, DataSource, EvalSet, TrainConfig, TrainState,
};
use dahash::{atomic_write, Error, Result};

#[derive(Parser)]
#[command(name = "dahash", version, about = "Domain-adaptive hashing: train, encode, index and evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain on the source, then run the staged adaptation schedule.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Binarize a dataset into a code file.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// First item id; items are numbered consecutively from here.
        #[arg(long, default_value_t = 0)]
        id_offset: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge one or more code files into a single index.
    BuildIndex {
        #[arg(long = "codes", required = true, num_args = 1..)]
        codes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// k nearest neighbours of every query, as CSV.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean average precision of queries against an index.
    EvalMap {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Score only the top k of each ranking.
        #[arg(long)]
        map_cutoff: Option<usize>,
        /// Keep a query's own entry when the queries are part of the index.
        #[arg(long)]
        include_self: bool,
        /// Also report precision at this depth.
        #[arg(long)]
        precision_k: Option<usize>,
    },
    /// Classification accuracy of a model on labelled data.
    EvalAcc {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Compare analytic and finite-difference gradients on random small models.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum layer width.
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Write continuous embeddings u as CSV: id,label,u_1..u_d.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic two-domain benchmark as CSV files.
    MakeSynthetic {
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
        /// Read synthetic.* keys from this config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides synthetic.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the target without its label column.
        #[arg(long)]
        strip_target_labels: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV features, last column the label unless --unlabeled.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    unlabeled: bool,
    /// IDX image file (use with --labels).
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    #[arg(long, requires = "images")]
    limit: Option<usize>,
}

/// Features plus labels as original values; -1 where unlabelled.
struct Loaded {
    dataset: Dataset,
    raw_labels: Vec<i32>,
}

impl DataArgs {
    fn load(&self) -> Result<Loaded> {
        if let Some(path) = &self.data {
            let (dataset, mapping) = load_csv(path, !self.unlabeled, Domain::Target)?;
            let raw_labels = match dataset.labels() {
                Some(l) => l.iter().map(|&k| to_i32(mapping.original[k])).collect::<Result<_>>()?,
                None => vec![-1; dataset.len()],
            };
            return Ok(Loaded { dataset, raw_labels });
        }
        match (&self.images, &self.labels) {
            (Some(images), Some(labels)) => {
                let dataset = load_idx(images, labels, self.limit, Domain::Target)?;
                let raw_labels = dataset.require_labels()?.iter().map(|&k| k as i32).collect();
                Ok(Loaded { dataset, raw_labels })
            }
            _ => Err(Error::Config("give --data <csv> or --images <idx> --labels <idx>".into())),
        }
    }
}

fn to_i32(v: i64) -> Result<i32> {
    i32::try_from(v).map_err(|_| Error::Config(format!("label {v} does not fit in 32 bits")))
}

fn check_input_dim(model: &Model, ds: &Dataset) -> Result<()> {
    let want = model.encoder.input_dim();
    if ds.dim() != want {
        return Err(Error::Config(format!(
            "model expects {want} features per row, data has {}",
            ds.dim()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, out, seed } => train(&config, &out, seed),
        Command::Encode {
            model,
            data,
            id_offset,
            out,
        } => {
            let model = load_model(&model)?;
            let loaded = data.load()?;
            check_input_dim(&model, &loaded.dataset)?;
            let codes = binarize(&model.encode(loaded.dataset.features())?);
            let mut index = RetrievalIndex::new(model.hash_bits());
            for (i, (code, &label)) in codes.iter().zip(&loaded.raw_labels).enumerate() {
                index.push(id_offset + i as u64, code, label)?;
            }
            save_codes(&out, &index)?;
            println!("encoded {} items, {} bits", index.len(), index.bits());
            Ok(())
        }
        Command::BuildIndex { codes, out } => {
            let mut merged: Option<RetrievalIndex> = None;
            let mut seen = std::collections::HashSet::new();
            for path in &codes {
                let part = load_codes(path)?;
                let index = merged.get_or_insert_with(|| RetrievalIndex::new(part.bits()));
                if part.bits() != index.bits() {
                    return Err(Error::Config(format!(
                        "{}: {}-bit codes, expected {}",
                        path.display(),
                        part.bits(),
                        index.bits()
                    )));
                }
                for i in 0..part.len() {
                    let id = part.ids()[i];
                    if !seen.insert(id) {
                        return Err(Error::Config(format!("{}: duplicate item id {id}", path.display())));
                    }
                    index.push(id, &part.code(i), part.labels()[i])?;
                }
            }
            let index = merged.ok_or(Error::Empty("code file list"))?;
            save_codes(&out, &index)?;
            println!("index: {} items, {} bits", index.len(), index.bits());
            Ok(())
        }
        Command::Query {
            index,
            queries,
            k,
            threads,
            out,
        } => {
            let index = load_codes(&index)?;
            let queries = load_codes(&queries)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let hits = pool.install(|| {
                (0..queries.len())
                    .into_par_iter()
                    .map(|q| index.knn(&queries.code(q), k))
                    .collect::<Result<Vec<_>>>()
            })?;
            let label_of: std::collections::HashMap<u64, i32> =
                index.ids().iter().copied().zip(index.labels().iter().copied()).collect();
            let mut text = String::from("query_id,rank,id,distance,label\n");
            for (q, list) in hits.iter().enumerate() {
                for (rank, n) in list.iter().enumerate() {
                    writeln!(text, "{},{},{},{},{}", queries.ids()[q], rank + 1, n.id, n.distance, label_of[&n.id]).unwrap();
                }
            }
            match out {
                Some(path) => atomic_write(&path, text.as_bytes()),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::EvalMap {
            index,
            queries,
            map_cutoff,
            include_self,
            precision_k,
        } => {
            let index = load_codes(&index)?;
            let queries = load_codes(&queries)?;
            let opts = MapOptions {
                exclude_self: !include_self,
                cutoff: map_cutoff,
            };
            println!("MAP={:.6}", mean_average_precision(&index, &queries, &opts)?);
            if let Some(k) = precision_k {
                println!("P@{k}={:.6}", precision_at_k(&index, &queries, k, !include_self)?);
            }
            Ok(())
        }
        Command::EvalAcc { model, data } => {
            let model = load_model(&model)?;
            let loaded = data.load()?;
            check_input_dim(&model, &loaded.dataset)?;
            let acc = evaluate_accuracy(&model, loaded.dataset.features(), loaded.dataset.require_labels()?)?;
            println!("ACC={acc:.6}");
            Ok(())
        }
        Command::GradCheck {
            instances,
            seed,
            width,
            batch,
            tolerance,
        } => {
            if instances == 0 || batch == 0 {
                return Err(Error::Config("instances and batch must be >= 1".into()));
            }
            let report = random_grad_check(seed, instances, width, batch)?;
            for (name, err) in report.rows() {
                println!("{name}: max_rel_error={err:.6e}");
            }
            let worst = report.max();
            if worst < tolerance {
                println!("PASS max_rel_error={worst:.6e} tolerance={tolerance:e}");
                Ok(())
            } else {
                println!("FAIL max_rel_error={worst:.6e} tolerance={tolerance:e}");
                Err(Error::Contract("gradient check exceeded tolerance".into()))
            }
        }
        Command::ExportEmbeddings { model, data, out } => {
            let model = load_model(&model)?;
            let loaded = data.load()?;
            check_input_dim(&model, &loaded.dataset)?;
            let u = model.encode(loaded.dataset.features())?;
            atomic_write(&out, embeddings_csv(&u, &loaded.raw_labels).as_bytes())
        }
        Command::MakeSynthetic {
            out_source,
            out_target,
            config,
            seed,
            strip_target_labels,
        } => {
            let (spec, shift, cfg_seed) = match config {
                Some(path) => match TrainConfig::load(&path)?.data {
                    DataSource::Synthetic { spec, shift, seed } => (spec, shift, seed),
                    _ => return Err(Error::Config(format!("{}: data.format is not synthetic", path.display()))),
                },
                None => (SyntheticSpec::default(), ShiftSpec::default(), 0),
            };
            let (source, target) = make_synthetic_pair(&spec, &shift, seed.unwrap_or(cfg_seed))?;
            let target = if strip_target_labels {
                Dataset::new(target.features().clone(), None, target.num_classes(), Domain::Target)?
            } else {
                target
            };
            write_csv(&out_source, &source)?;
            write_csv(&out_target, &target)?;
            println!("wrote {} source and {} target rows, dim {}", source.len(), target.len(), source.dim());
            Ok(())
        }
    }
}

fn embeddings_csv(u: &dahash::diffcore::Array, labels: &[i32]) -> String {
    let mut s = String::from("id,label");
    for j in 1..=u.cols() {
        write!(s, ",u_{j}").unwrap();
    }
    s.push('\n');
    for (i, label) in labels.iter().enumerate() {
        write!(s, "{i},{label}").unwrap();
        for v in u.row(i) {
            write!(s, ",{v:.6}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn train(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.hp.seed = s;
    }
    let (source, target) = cfg.data.load()?;
    let classes = source.num_classes();
    cfg.hp.validate(classes)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    atomic_write(&out.join("config.txt"), cfg.to_text().as_bytes())?;

    let dims = cfg.model_dims(source.dim(), classes);
    let mut state = TrainState::new(Model::init(&dims, cfg.hp.seed)?, cfg.hp.clone())?;
    state.pretrain_source(&source, cfg.hp.pretrain_epochs)?;
    save_model(&out.join("pretrained.adah"), &state.model)?;
    write_metrics_csv(&out.join("pretrain_metrics.csv"), &state.pretrain_history)?;
    let eval = target.labels().map(|labels| EvalSet {
        features: target.features(),
        labels,
    });
    if let Some(e) = eval {
        let acc = evaluate_accuracy(&state.model, e.features, e.labels)?;
        eprintln!("pretrained: tgt_acc={acc:.6}");
    }

    let metrics_path = out.join("metrics.csv");
    state.run_stages(
        &source,
        target.unlabeled(),
        cfg.hp.stages,
        cfg.hp.epochs_per_stage,
        eval,
        &mut |st| {
            save_model(&out.join(format!("stage_{}.adah", st.stage)), &st.model)?;
            write_metrics_csv(&metrics_path, &st.history)?;
            if let Some(m) = st.history.last() {
                let tgt = m.tgt_acc.map_or(String::new(), |a| format!(" tgt_acc={a:.6}"));
                eprintln!("stage {}: src_acc={:.6}{tgt}", st.stage, m.src_acc);
            }
            Ok(())
        },
    )?;
    save_model(&out.join("model.adah"), &state.model)?;
    println!("wrote {}", out.join("model.adah").display());
    Ok(())
}
