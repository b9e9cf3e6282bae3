//! The five subcommands: impute, mi, pool, cv, simulate.
//!
//! Each command resolves its options (flags over config file over
//! defaults), runs the corresponding library operation, writes its
//! outputs into the output directory, and finishes with a
//! `manifest.json` / `run.cfg` pair describing the run.

use crate::error::{CliError, Result};
use crate::io::{format_field, format_value, read_dataset, write_matrix, write_text, Dataset};
use crate::manifest::RunManifest;
use crate::opts::{
    quantities_config_value, resolve_input, resolve_quantities, ChainOpts, Cli, Command,
    CommonOpts, CvArgs, CvOpts, FitOpts, ImputeArgs, MiArgs, PoolArgs, RankRequest, Resolver,
    SimArgs, SimOpts,
};
use mipca::analysis::{analyze, rubin_pool, Quantity};
use mipca::impute::iterative_pca;
use mipca::rank::{cross_validate_rank, CvConfig};
use mipca::sampler::bayes_mipca;
use mipca::sim::{derive_seed, lanes, run_experiment};
use mipca::{CompleteMatrix, IncompleteMatrix};
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Impute(args) => cmd_impute(args),
        Command::Mi(args) => cmd_mi(args),
        Command::Pool(args) => cmd_pool(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string())
}

/// Per-column scale factors for `--standardize`.
///
/// Each column is divided by the standard deviation of its observed
/// cells before fitting; columns with fewer than two observed cells or a
/// degenerate deviation keep scale one. Outputs are multiplied back, and
/// observed cells are finally restored from the original input so that
/// standardization can never perturb them.
struct Standardization {
    factors: Vec<f64>,
}

impl Standardization {
    fn identity(p: usize) -> Self {
        Standardization {
            factors: vec![1.0; p],
        }
    }

    fn fit(x: &IncompleteMatrix) -> Self {
        let factors = (0..x.ncols())
            .map(|j| {
                let observed: Vec<f64> = (0..x.nrows())
                    .filter(|&i| x.is_observed(i, j))
                    .map(|i| x.values()[(i, j)])
                    .collect();
                if observed.len() < 2 {
                    return 1.0;
                }
                let mean = observed.iter().sum::<f64>() / observed.len() as f64;
                let var = observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (observed.len() - 1) as f64;
                let sd = var.sqrt();
                if sd.is_finite() && sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardization { factors }
    }

    /// The input divided column-wise by the fitted factors.
    fn shrink(&self, x: &IncompleteMatrix) -> IncompleteMatrix {
        let mut values = x.values().clone();
        for j in 0..values.ncols() {
            values.column_mut(j).scale_mut(1.0 / self.factors[j]);
        }
        IncompleteMatrix::from_parts(values, x.mask().clone())
            .expect("rescaling preserves the matrix shape")
    }

    /// Multiplies a completed matrix back to the original scale.
    fn expand(&self, values: &mut DMatrix<f64>) {
        for j in 0..values.ncols() {
            values.column_mut(j).scale_mut(self.factors[j]);
        }
    }
}

/// Copies every observed cell of `original` into `completed` verbatim.
fn restore_observed(completed: &mut DMatrix<f64>, original: &IncompleteMatrix) {
    for j in 0..original.ncols() {
        for i in 0..original.nrows() {
            if original.is_observed(i, j) {
                completed[(i, j)] = original.values()[(i, j)];
            }
        }
    }
}

/// Resolves a fixed-or-cross-validated rank request against a dataset.
///
/// Cross-validation uses a stream derived from the user seed, leaving
/// the raw seed to the sampler chain.
fn resolve_rank(
    request: &RankRequest,
    x: &IncompleteMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<usize> {
    match request {
        RankRequest::Fixed(rank) => Ok(*rank),
        RankRequest::CrossValidated(candidates) => {
            let config = CvConfig {
                tol,
                max_iter,
                ..CvConfig::new(candidates.clone(), derive_seed(seed, 0, lanes::CV_RUN))
            };
            let report = cross_validate_rank(x, &config).map_err(CliError::Model)?;
            eprintln!("cross-validation selected rank {}", report.selected);
            Ok(report.selected)
        }
    }
}

fn cmd_impute(args: ImputeArgs) -> Result<()> {
    let resolver = Resolver::load(args.common.config.as_deref())?;
    let common = CommonOpts::resolve(&args.common, &resolver)?;
    let fit = FitOpts::resolve(&args.fit, &resolver, "impute")?;
    let input = resolve_input(args.input, &resolver, "impute")?;
    let dataset = read_dataset(&input, &common.table)?;

    let standardization = if fit.standardize {
        Standardization::fit(&dataset.matrix)
    } else {
        Standardization::identity(dataset.matrix.ncols())
    };
    let x = standardization.shrink(&dataset.matrix);
    let rank = resolve_rank(&fit.rank, &x, fit.tol, fit.max_iter, fit.seed)?;
    let result = iterative_pca(&x, rank, true, fit.tol, fit.max_iter).map_err(CliError::Model)?;
    let mut completed = result.completed.into_inner();
    standardization.expand(&mut completed);
    restore_observed(&mut completed, &dataset.matrix);

    ensure_out_dir(&common.out_dir)?;
    let name = format!("{}_completed.csv", file_stem(&input));
    write_matrix(
        &common.out_dir.join(&name),
        &completed,
        dataset.columns.as_deref(),
        &common.table,
    )?;

    let mut config = common.config_map();
    fit.extend_config(&mut config);
    config.insert("input".to_string(), input.display().to_string());
    let mut manifest = RunManifest::new("impute", config);
    manifest.add_input(&input)?;
    manifest.add_output(&name);
    manifest.write(&common.out_dir)?;

    println!(
        "imputed {} missing cells at rank {rank} ({} sweeps); wrote {}",
        dataset.matrix.n_missing(),
        result.iterations,
        common.out_dir.join(&name).display()
    );
    Ok(())
}

fn cmd_mi(args: MiArgs) -> Result<()> {
    let resolver = Resolver::load(args.common.config.as_deref())?;
    let common = CommonOpts::resolve(&args.common, &resolver)?;
    let fit = FitOpts::resolve(&args.fit, &resolver, "mi")?;
    let chain = ChainOpts::resolve(args.imputations, args.lstart, args.spacing, &resolver)?;
    let input = resolve_input(args.input, &resolver, "mi")?;
    let dataset = read_dataset(&input, &common.table)?;

    if dataset.matrix.n_missing() == 0 {
        eprintln!(
            "warning: {} has no missing cells; the {} imputed datasets will be identical",
            input.display(),
            chain.imputations
        );
    }

    let standardization = if fit.standardize {
        Standardization::fit(&dataset.matrix)
    } else {
        Standardization::identity(dataset.matrix.ncols())
    };
    let x = standardization.shrink(&dataset.matrix);
    let rank = resolve_rank(&fit.rank, &x, fit.tol, fit.max_iter, fit.seed)?;
    let config = chain.mi_config(rank, fit.seed, fit.tol, fit.max_iter);
    let set = bayes_mipca(&x, &config).map_err(CliError::Model)?;

    ensure_out_dir(&common.out_dir)?;
    let stem = file_stem(&input);
    let mut outputs = Vec::new();
    for (k, completed) in set.completed.iter().enumerate() {
        let mut values = completed.values().clone();
        standardization.expand(&mut values);
        restore_observed(&mut values, &dataset.matrix);
        let name = format!("{stem}_imp{}.csv", k + 1);
        write_matrix(
            &common.out_dir.join(&name),
            &values,
            dataset.columns.as_deref(),
            &common.table,
        )?;
        outputs.push(name);
    }
    let trace_name = format!("{stem}_trace.csv");
    write_text(
        &common.out_dir.join(&trace_name),
        &set.trace.to_dsv(common.table.delimiter),
    )?;
    outputs.push(trace_name);

    let mut config_map = common.config_map();
    fit.extend_config(&mut config_map);
    chain.extend_config(&mut config_map);
    config_map.insert("input".to_string(), input.display().to_string());
    let mut manifest = RunManifest::new("mi", config_map);
    manifest.add_input(&input)?;
    for name in &outputs {
        manifest.add_output(name.clone());
    }
    manifest.write(&common.out_dir)?;

    println!(
        "drew {} imputed datasets at rank {rank} (burn-in {}, spacing {}); wrote {}/{{{}_imp1..{}.csv,{}_trace.csv}}",
        set.len(),
        chain.burn_in,
        chain.spacing,
        common.out_dir.display(),
        stem,
        set.len(),
        stem
    );
    Ok(())
}

/// One pooled output row on the reporting scale.
fn pooled_row(
    quantity: &Quantity,
    files: &[(PathBuf, CompleteMatrix)],
    delimiter: char,
    na_token: &str,
) -> Result<String> {
    let analyses = files
        .iter()
        .map(|(path, x)| {
            analyze(x, quantity).map_err(|source| CliError::Data {
                path: path.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = rubin_pool(&analyses).map_err(CliError::Model)?;
    let (ci_low, ci_high) = pooled.reported_interval();
    let fields = [
        pooled.reported_estimate(),
        pooled.within,
        pooled.between,
        pooled.total_variance,
        pooled.df,
        ci_low,
        ci_high,
    ];
    let mut row = format_field(&quantity.label(), delimiter);
    for v in fields {
        row.push(delimiter);
        row.push_str(&format_value(v, na_token));
    }
    Ok(row)
}

fn cmd_pool(args: PoolArgs) -> Result<()> {
    let resolver = Resolver::load(args.common.config.as_deref())?;
    let common = CommonOpts::resolve(&args.common, &resolver)?;
    let quantities = resolve_quantities(&args.quantity, &resolver)?;
    if quantities.is_empty() {
        return Err(CliError::usage("pool requires at least one --quantity"));
    }
    let inputs: Vec<PathBuf> = if args.inputs.is_empty() {
        resolver
            .raw("inputs")
            .map(|raw| raw.split_whitespace().map(PathBuf::from).collect())
            .unwrap_or_default()
    } else {
        args.inputs
    };
    if inputs.len() < 2 {
        return Err(CliError::usage(
            "pool needs at least two completed datasets (one per imputation)",
        ));
    }

    let mut files = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let Dataset { matrix, .. } = read_dataset(path, &common.table)?;
        let complete = matrix.to_complete().ok_or_else(|| CliError::Data {
            path: path.clone(),
            source: mipca::Error::config("completed dataset still has missing cells"),
        })?;
        files.push((path.clone(), complete));
    }
    let p = files[0].1.ncols();
    for (path, x) in &files {
        if x.ncols() != p {
            return Err(CliError::Data {
                path: path.clone(),
                source: mipca::Error::config(format!(
                    "expected {p} columns like the first dataset, found {}",
                    x.ncols()
                )),
            });
        }
    }
    for quantity in &quantities {
        if quantity.max_col() >= p {
            return Err(CliError::usage(format!(
                "quantity {} references column {} but the data has {p} columns",
                quantity.label(),
                quantity.max_col() + 1
            )));
        }
    }

    let d = common.table.delimiter;
    let header = [
        "quantity",
        "estimate",
        "within",
        "between",
        "total_variance",
        "df",
        "ci_low",
        "ci_high",
    ]
    .join(&d.to_string());
    let mut table = header + "\n";
    for quantity in &quantities {
        table.push_str(&pooled_row(
            quantity,
            &files,
            d,
            &common.table.na_token,
        )?);
        table.push('\n');
    }

    ensure_out_dir(&common.out_dir)?;
    write_text(&common.out_dir.join("pooled.csv"), &table)?;

    let mut config = common.config_map();
    config.insert("quantity".to_string(), quantities_config_value(&quantities));
    config.insert(
        "inputs".to_string(),
        inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    let mut manifest = RunManifest::new("pool", config);
    for path in &inputs {
        manifest.add_input(path)?;
    }
    manifest.add_output("pooled.csv");
    manifest.write(&common.out_dir)?;

    print!("{table}");
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let resolver = Resolver::load(args.common.config.as_deref())?;
    let common = CommonOpts::resolve(&args.common, &resolver)?;
    let opts = CvOpts::resolve(&args, &resolver)?;
    let input = resolve_input(args.input, &resolver, "cv")?;
    let dataset = read_dataset(&input, &common.table)?;

    let report = cross_validate_rank(&dataset.matrix, &opts.cv_config()).map_err(CliError::Model)?;

    ensure_out_dir(&common.out_dir)?;
    write_text(
        &common.out_dir.join("cv.csv"),
        &report.to_dsv(common.table.delimiter),
    )?;

    let mut config = common.config_map();
    opts.extend_config(&mut config);
    config.insert("input".to_string(), input.display().to_string());
    let mut manifest = RunManifest::new("cv", config);
    manifest.add_input(&input)?;
    manifest.add_output("cv.csv");
    manifest.write(&common.out_dir)?;

    println!("selected rank {}", report.selected);
    Ok(())
}

fn cmd_simulate(args: SimArgs) -> Result<()> {
    let resolver = Resolver::load(args.common.config.as_deref())?;
    let common = CommonOpts::resolve(&args.common, &resolver)?;
    let opts = SimOpts::resolve(&args, &resolver)?;

    let report = run_experiment(&opts.config).map_err(CliError::Model)?;

    ensure_out_dir(&common.out_dir)?;
    write_text(
        &common.out_dir.join("simreport.csv"),
        &report.to_dsv(common.table.delimiter),
    )?;

    let mut config: BTreeMap<String, String> = common.config_map();
    opts.extend_config(&mut config);
    let mut manifest = RunManifest::new("simulate", config);
    manifest.add_output("simreport.csv");
    manifest.write(&common.out_dir)?;

    println!(
        "ran {} replications at rank {}; wrote {}",
        report.replications,
        report.rank_used,
        common.out_dir.join("simreport.csv").display()
    );
    Ok(())
}
