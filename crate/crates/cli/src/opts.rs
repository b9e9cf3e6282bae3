//! Command-line surface and configuration resolution.
//!
//! Every option can come from a flag or from a flat `key=value` config
//! file given via `--config`; flags take precedence, and built-in
//! defaults fill whatever remains. Boolean flags (`--header`,
//! `--standardize`) can be enabled from either source. The resolved
//! configuration of a run is written back out as `run.cfg`, which can be
//! passed to `--config` to repeat the run.

use crate::error::{CliError, Result};
use crate::io::TableOptions;
use crate::manifest::read_config_file;
use clap::{Args, Parser, Subcommand};
use mipca::analysis::Quantity;
use mipca::impute::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use mipca::rank::CvConfig;
use mipca::sampler::MiConfig;
use mipca::sim::{CovarianceDesign, Method, RankChoice, SimConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const DEFAULT_SEED: u64 = 0;

/// Multiple imputation of continuous data through low-rank models.
#[derive(Debug, Parser)]
#[command(name = "mipca", version, about, max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fill missing cells once with the regularized low-rank fit.
    Impute(ImputeArgs),
    /// Draw multiply imputed datasets from the Bayesian sampler.
    Mi(MiArgs),
    /// Analyze imputed datasets and pool the results.
    Pool(PoolArgs),
    /// Choose the rank by cell-wise cross-validation.
    Cv(CvArgs),
    /// Run a Monte Carlo coverage experiment on synthetic data.
    Simulate(SimArgs),
}

/// Options shared by every command: table format, output directory, and
/// the optional config file.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Field delimiter for tabular input and output ("\t" for tab).
    #[arg(long)]
    pub delimiter: Option<String>,
    /// Token marking a missing value; empty fields always count as missing.
    #[arg(long)]
    pub na_token: Option<String>,
    /// Treat the first input row as column names.
    #[arg(long)]
    pub header: bool,
    /// Directory receiving all output files (created if absent).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Flat key=value config file; flags take precedence over its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Options shared by the model-fitting commands.
#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Number of retained components.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Choose the rank by cross-validation over these candidates
    /// (a range "1..8" or a list "1,2,5").
    #[arg(long, conflicts_with = "rank")]
    pub cv: Option<String>,
    /// Relative change in the fitted matrix that stops the inner fit.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap of the inner fit.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Seed for all random draws.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Divide each column by its observed-data standard deviation before
    /// fitting, then rescale the outputs.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Parser)]
pub struct ImputeArgs {
    /// Input dataset.
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Parser)]
pub struct MiArgs {
    /// Input dataset.
    pub input: Option<PathBuf>,
    /// Number of imputed datasets.
    #[arg(short = 'M', long)]
    pub imputations: Option<usize>,
    /// Iterations discarded before the first retained draw.
    #[arg(long)]
    pub lstart: Option<usize>,
    /// Iterations between retained draws.
    #[arg(long)]
    pub spacing: Option<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Parser)]
pub struct PoolArgs {
    /// Completed datasets, one per imputation.
    pub inputs: Vec<PathBuf>,
    /// Quantity to estimate and pool: mean:J, corr:I,J, or
    /// reg:R~P1,P2,... with 1-based column numbers. Repeatable.
    #[arg(long)]
    pub quantity: Vec<String>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Parser)]
pub struct CvArgs {
    /// Input dataset.
    pub input: Option<PathBuf>,
    /// Candidate ranks (a range "1..8" or a list "1,2,5").
    #[arg(long)]
    pub candidates: Option<String>,
    /// Share of observed cells held out per fold.
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Number of holdout folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Relative change in the fitted matrix that stops the inner fit.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap of the inner fit.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Seed for the holdout draws.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Parser)]
pub struct SimArgs {
    /// Rows per synthetic dataset.
    #[arg(long)]
    pub n: Option<usize>,
    /// Columns per synthetic dataset.
    #[arg(long)]
    pub p: Option<usize>,
    /// Population covariance: "block:RHO" (two equicorrelated blocks) or
    /// "random" (a random correlation matrix per dataset).
    #[arg(long)]
    pub design: Option<String>,
    /// Share of cells hidden per dataset.
    #[arg(long)]
    pub missing_rate: Option<f64>,
    /// Quantities estimated on every dataset (same syntax as pool).
    /// Repeatable.
    #[arg(long)]
    pub quantity: Vec<String>,
    /// Methods compared: comma list of full_data, listwise_deletion,
    /// bayes_mipca (default all three).
    #[arg(long)]
    pub methods: Option<String>,
    /// Number of replications.
    #[arg(short = 'K', long)]
    pub reps: Option<usize>,
    /// Number of imputed datasets per replication.
    #[arg(short = 'M', long)]
    pub imputations: Option<usize>,
    /// Iterations discarded before the first retained draw.
    #[arg(long)]
    pub lstart: Option<usize>,
    /// Iterations between retained draws.
    #[arg(long)]
    pub spacing: Option<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Flag-over-config-file merge of one command's options.
pub struct Resolver {
    values: BTreeMap<String, String>,
}

impl Resolver {
    /// Loads the config file when one was given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let values = match path {
            Some(p) => read_config_file(p)?,
            None => BTreeMap::new(),
        };
        Ok(Resolver { values })
    }

    /// The flag value when present, otherwise the parsed config entry.
    pub fn merge<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::usage(format!("config key '{key}': cannot parse value {raw:?}"))
            }),
            None => Ok(None),
        }
    }

    /// A boolean that either source can switch on.
    pub fn merge_flag(&self, key: &str, flag: bool) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.merge::<bool>(key, None)?.unwrap_or(false))
    }

    /// The raw config entry, for values with non-`FromStr` parsing.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// A delimiter rendered so it survives the trimming config parser.
pub fn delimiter_to_config(delimiter: char) -> String {
    match delimiter {
        '\t' => "\\t".to_string(),
        other => other.to_string(),
    }
}

fn delimiter_from_str(raw: &str) -> Result<char> {
    if raw == "\\t" {
        return Ok('\t');
    }
    let mut chars = raw.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii() && c != '"' && c != '\n' && c != '\r' => Ok(c),
        _ => Err(CliError::usage(format!(
            "delimiter must be one ASCII character (or \\t), got {raw:?}"
        ))),
    }
}

/// Table format and output directory shared by all commands.
#[derive(Debug, Clone)]
pub struct CommonOpts {
    pub table: TableOptions,
    pub out_dir: PathBuf,
}

impl CommonOpts {
    pub fn resolve(args: &CommonArgs, resolver: &Resolver) -> Result<Self> {
        let delimiter = match resolver.merge("delimiter", args.delimiter.clone())? {
            Some(raw) => delimiter_from_str(&raw)?,
            None => ',',
        };
        let na_token = resolver
            .merge("na_token", args.na_token.clone())?
            .unwrap_or_else(|| "NA".to_string());
        let header = resolver.merge_flag("header", args.header)?;
        let out_dir = resolver
            .merge("out_dir", args.out_dir.clone())?
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(CommonOpts {
            table: TableOptions {
                delimiter,
                na_token,
                header,
            },
            out_dir,
        })
    }

    /// The config entries shared by every command.
    pub fn config_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert(
            "delimiter".to_string(),
            delimiter_to_config(self.table.delimiter),
        );
        map.insert("na_token".to_string(), self.table.na_token.clone());
        map.insert("header".to_string(), self.table.header.to_string());
        map.insert("out_dir".to_string(), self.out_dir.display().to_string());
        map
    }
}

/// Parses rank candidates: an inclusive range "1..8" or a comma list.
pub fn parse_candidates(raw: &str) -> Result<Vec<usize>> {
    let bad = || CliError::usage(format!("bad rank candidates {raw:?}: use A..B or a comma list"));
    let parse_one = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    if let Some((lo, hi)) = raw.split_once("..") {
        let (lo, hi) = (parse_one(lo)?, parse_one(hi)?);
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    let candidates = raw
        .split(',')
        .map(parse_one)
        .collect::<Result<Vec<usize>>>()?;
    if candidates.is_empty() || candidates.contains(&0) {
        return Err(bad());
    }
    Ok(candidates)
}

/// How the rank was requested on the command line.
#[derive(Debug, Clone)]
pub enum RankRequest {
    Fixed(usize),
    CrossValidated(Vec<usize>),
}

impl RankRequest {
    /// Merges `--rank`/`--cv` with the config keys `rank`/`cv`.
    ///
    /// A flag beats both config keys; with config only, exactly one of
    /// the two keys may be present.
    pub fn resolve(
        rank: Option<usize>,
        cv: Option<&str>,
        resolver: &Resolver,
    ) -> Result<Option<Self>> {
        if let Some(r) = rank {
            return Ok(Some(RankRequest::Fixed(r)));
        }
        if let Some(spec) = cv {
            return Ok(Some(RankRequest::CrossValidated(parse_candidates(spec)?)));
        }
        match (resolver.raw("rank"), resolver.raw("cv")) {
            (Some(_), Some(_)) => Err(CliError::usage(
                "config sets both 'rank' and 'cv'; keep exactly one",
            )),
            (Some(raw), None) => {
                let r = raw.parse::<usize>().map_err(|_| {
                    CliError::usage(format!("config key 'rank': cannot parse value {raw:?}"))
                })?;
                Ok(Some(RankRequest::Fixed(r)))
            }
            (None, Some(raw)) => Ok(Some(RankRequest::CrossValidated(parse_candidates(raw)?))),
            (None, None) => Ok(None),
        }
    }

    /// The config entry this request persists as.
    pub fn config_entry(&self) -> (String, String) {
        match self {
            RankRequest::Fixed(r) => ("rank".to_string(), r.to_string()),
            RankRequest::CrossValidated(c) => ("cv".to_string(), join_usize(c)),
        }
    }

    pub fn to_rank_choice(&self) -> RankChoice {
        match self {
            RankRequest::Fixed(r) => RankChoice::Fixed(*r),
            RankRequest::CrossValidated(c) => RankChoice::CrossValidated {
                candidates: c.clone(),
            },
        }
    }
}

fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Quantity specs from flags or from the whitespace-separated config
/// entry `quantity`.
pub fn resolve_quantities(flags: &[String], resolver: &Resolver) -> Result<Vec<Quantity>> {
    let specs: Vec<String> = if flags.is_empty() {
        resolver
            .raw("quantity")
            .map(|raw| raw.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default()
    } else {
        flags.to_vec()
    };
    specs
        .iter()
        .map(|spec| Quantity::parse(spec).map_err(CliError::Model))
        .collect()
}

pub fn quantities_config_value(quantities: &[Quantity]) -> String {
    quantities
        .iter()
        .map(Quantity::label)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses the simulate covariance design: "block:RHO" or "random".
pub fn parse_design(raw: &str) -> Result<CovarianceDesign> {
    if raw.trim() == "random" {
        return Ok(CovarianceDesign::RandomCorrelation);
    }
    if let Some(rho) = raw.trim().strip_prefix("block:") {
        let rho = rho.trim().parse::<f64>().map_err(|_| {
            CliError::usage(format!("bad design {raw:?}: block:RHO needs a number"))
        })?;
        return Ok(CovarianceDesign::Block { rho });
    }
    Err(CliError::usage(format!(
        "bad design {raw:?}: use block:RHO or random"
    )))
}

pub fn design_config_value(design: &CovarianceDesign) -> String {
    match design {
        CovarianceDesign::Block { rho } => format!("block:{rho}"),
        CovarianceDesign::RandomCorrelation => "random".to_string(),
    }
}

/// Parses the simulate method list.
pub fn parse_methods(raw: &str) -> Result<Vec<Method>> {
    raw.split(',')
        .map(|name| match name.trim() {
            "full_data" => Ok(Method::FullData),
            "listwise_deletion" => Ok(Method::ListwiseDeletion),
            "bayes_mipca" => Ok(Method::BayesMipca),
            other => Err(CliError::usage(format!(
                "unknown method '{other}': use full_data, listwise_deletion, bayes_mipca"
            ))),
        })
        .collect()
}

pub fn methods_config_value(methods: &[Method]) -> String {
    methods
        .iter()
        .map(|m| m.label().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Fully resolved `impute`/`mi` options.
#[derive(Debug, Clone)]
pub struct FitOpts {
    pub rank: RankRequest,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub standardize: bool,
}

impl FitOpts {
    pub fn resolve(args: &FitArgs, resolver: &Resolver, command: &str) -> Result<Self> {
        let rank = RankRequest::resolve(args.rank, args.cv.as_deref(), resolver)?
            .ok_or_else(|| CliError::usage(format!("{command} requires --rank or --cv")))?;
        Ok(FitOpts {
            rank,
            tol: resolver.merge("tol", args.tol)?.unwrap_or(DEFAULT_TOL),
            max_iter: resolver
                .merge("max_iter", args.max_iter)?
                .unwrap_or(DEFAULT_MAX_ITER),
            seed: resolver.merge("seed", args.seed)?.unwrap_or(DEFAULT_SEED),
            standardize: resolver.merge_flag("standardize", args.standardize)?,
        })
    }

    pub fn extend_config(&self, map: &mut BTreeMap<String, String>) {
        let (key, value) = self.rank.config_entry();
        map.insert(key, value);
        map.insert("tol".to_string(), format!("{:e}", self.tol));
        map.insert("max_iter".to_string(), self.max_iter.to_string());
        map.insert("seed".to_string(), self.seed.to_string());
        map.insert("standardize".to_string(), self.standardize.to_string());
    }
}

/// Fully resolved sampler chain settings for `mi` and `simulate`.
#[derive(Debug, Clone)]
pub struct ChainOpts {
    pub imputations: usize,
    pub burn_in: usize,
    pub spacing: usize,
}

impl ChainOpts {
    pub fn resolve(
        imputations: Option<usize>,
        lstart: Option<usize>,
        spacing: Option<usize>,
        resolver: &Resolver,
    ) -> Result<Self> {
        Ok(ChainOpts {
            imputations: resolver
                .merge("imputations", imputations)?
                .unwrap_or(MiConfig::DEFAULT_IMPUTATIONS),
            burn_in: resolver
                .merge("lstart", lstart)?
                .unwrap_or(MiConfig::DEFAULT_BURN_IN),
            spacing: resolver
                .merge("spacing", spacing)?
                .unwrap_or(MiConfig::DEFAULT_SPACING),
        })
    }

    pub fn extend_config(&self, map: &mut BTreeMap<String, String>) {
        map.insert("imputations".to_string(), self.imputations.to_string());
        map.insert("lstart".to_string(), self.burn_in.to_string());
        map.insert("spacing".to_string(), self.spacing.to_string());
    }

    /// The sampler configuration for a fixed rank and seed.
    pub fn mi_config(&self, rank: usize, seed: u64, tol: f64, max_iter: usize) -> MiConfig {
        MiConfig {
            rank,
            imputations: self.imputations,
            burn_in: self.burn_in,
            spacing: self.spacing,
            seed,
            tol,
            max_iter,
        }
    }
}

/// Resolves the positional input path against the config key `input`.
pub fn resolve_input(flag: Option<PathBuf>, resolver: &Resolver, command: &str) -> Result<PathBuf> {
    resolver
        .merge("input", flag)?
        .ok_or_else(|| CliError::usage(format!("{command} needs an input dataset")))
}

/// Fully resolved `cv` options.
#[derive(Debug, Clone)]
pub struct CvOpts {
    pub candidates: Vec<usize>,
    pub holdout_fraction: f64,
    pub folds: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl CvOpts {
    pub fn resolve(args: &CvArgs, resolver: &Resolver) -> Result<Self> {
        let candidates = match resolver.merge("candidates", args.candidates.clone())? {
            Some(raw) => parse_candidates(&raw)?,
            None => return Err(CliError::usage("cv requires --candidates")),
        };
        Ok(CvOpts {
            candidates,
            holdout_fraction: resolver
                .merge("holdout_fraction", args.holdout_fraction)?
                .unwrap_or(CvConfig::DEFAULT_HOLDOUT_FRACTION),
            folds: resolver
                .merge("folds", args.folds)?
                .unwrap_or(CvConfig::DEFAULT_FOLDS),
            tol: resolver.merge("tol", args.tol)?.unwrap_or(DEFAULT_TOL),
            max_iter: resolver
                .merge("max_iter", args.max_iter)?
                .unwrap_or(DEFAULT_MAX_ITER),
            seed: resolver.merge("seed", args.seed)?.unwrap_or(DEFAULT_SEED),
        })
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            candidates: self.candidates.clone(),
            holdout_fraction: self.holdout_fraction,
            folds: self.folds,
            seed: self.seed,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn extend_config(&self, map: &mut BTreeMap<String, String>) {
        map.insert("candidates".to_string(), join_usize(&self.candidates));
        map.insert(
            "holdout_fraction".to_string(),
            format!("{}", self.holdout_fraction),
        );
        map.insert("folds".to_string(), self.folds.to_string());
        map.insert("tol".to_string(), format!("{:e}", self.tol));
        map.insert("max_iter".to_string(), self.max_iter.to_string());
        map.insert("seed".to_string(), self.seed.to_string());
    }
}

/// Fully resolved `simulate` options.
#[derive(Debug, Clone)]
pub struct SimOpts {
    pub config: SimConfig,
}

impl SimOpts {
    pub fn resolve(args: &SimArgs, resolver: &Resolver) -> Result<Self> {
        fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
            value.ok_or_else(|| CliError::usage(format!("simulate requires --{flag}")))
        }
        let n = require(resolver.merge("n", args.n)?, "n")?;
        let p = require(resolver.merge("p", args.p)?, "p")?;
        let design_raw = require(resolver.merge("design", args.design.clone())?, "design")?;
        let missing_rate = require(
            resolver.merge("missing_rate", args.missing_rate)?,
            "missing-rate",
        )?;
        let reps = require(resolver.merge("reps", args.reps)?, "reps")?;
        let rank = RankRequest::resolve(args.fit.rank, args.fit.cv.as_deref(), resolver)?
            .ok_or_else(|| CliError::usage("simulate requires --rank or --cv"))?;
        let quantities = resolve_quantities(&args.quantity, resolver)?;
        if quantities.is_empty() {
            return Err(CliError::usage("simulate requires at least one --quantity"));
        }
        let methods = match resolver.merge("methods", args.methods.clone())? {
            Some(raw) => parse_methods(&raw)?,
            None => vec![
                Method::FullData,
                Method::ListwiseDeletion,
                Method::BayesMipca,
            ],
        };
        let chain = ChainOpts::resolve(args.imputations, args.lstart, args.spacing, resolver)?;
        let config = SimConfig {
            methods,
            imputations: chain.imputations,
            burn_in: chain.burn_in,
            spacing: chain.spacing,
            tol: resolver.merge("tol", args.fit.tol)?.unwrap_or(DEFAULT_TOL),
            max_iter: resolver
                .merge("max_iter", args.fit.max_iter)?
                .unwrap_or(DEFAULT_MAX_ITER),
            ..SimConfig::new(
                n,
                p,
                parse_design(&design_raw)?,
                missing_rate,
                rank.to_rank_choice(),
                quantities,
                reps,
                resolver
                    .merge("seed", args.fit.seed)?
                    .unwrap_or(DEFAULT_SEED),
            )
        };
        Ok(SimOpts { config })
    }

    pub fn extend_config(&self, map: &mut BTreeMap<String, String>) {
        let c = &self.config;
        map.insert("n".to_string(), c.n.to_string());
        map.insert("p".to_string(), c.p.to_string());
        map.insert("design".to_string(), design_config_value(&c.covariance));
        map.insert("missing_rate".to_string(), format!("{}", c.missing_rate));
        map.insert("reps".to_string(), c.replications.to_string());
        match &c.rank {
            RankChoice::Fixed(r) => map.insert("rank".to_string(), r.to_string()),
            RankChoice::CrossValidated { candidates } => {
                map.insert("cv".to_string(), join_usize(candidates))
            }
        };
        map.insert(
            "quantity".to_string(),
            quantities_config_value(&c.quantities),
        );
        map.insert("methods".to_string(), methods_config_value(&c.methods));
        map.insert("imputations".to_string(), c.imputations.to_string());
        map.insert("lstart".to_string(), c.burn_in.to_string());
        map.insert("spacing".to_string(), c.spacing.to_string());
        map.insert("tol".to_string(), format!("{:e}", c.tol));
        map.insert("max_iter".to_string(), c.max_iter.to_string());
        map.insert("seed".to_string(), c.master_seed.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolver_from(pairs: &[(&str, &str)]) -> Resolver {
        let mut values = BTreeMap::new();
        for (k, v) in pairs {
            values.insert(k.to_string(), v.to_string());
        }
        Resolver { values }
    }

    #[test]
    fn flags_beat_config_values() {
        let resolver = resolver_from(&[("seed", "7"), ("tol", "0.5")]);
        assert_eq!(resolver.merge("seed", Some(42u64)).unwrap(), Some(42));
        assert_eq!(resolver.merge("seed", None::<u64>).unwrap(), Some(7));
        assert_eq!(resolver.merge("missing", None::<u64>).unwrap(), None);
        assert!(resolver.merge("tol", None::<u64>).is_err());
    }

    #[test]
    fn candidate_specs_parse_as_ranges_or_lists() {
        assert_eq!(parse_candidates("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_candidates("2,5,3").unwrap(), vec![2, 5, 3]);
        assert_eq!(parse_candidates("3").unwrap(), vec![3]);
        assert!(parse_candidates("0..2").is_err());
        assert!(parse_candidates("4..2").is_err());
        assert!(parse_candidates("a,b").is_err());
    }

    #[test]
    fn rank_request_rules_match_the_precedence_contract() {
        let both = resolver_from(&[("rank", "2"), ("cv", "1..3")]);
        assert!(RankRequest::resolve(None, None, &both).is_err());
        assert!(matches!(
            RankRequest::resolve(Some(4), None, &both).unwrap(),
            Some(RankRequest::Fixed(4))
        ));
        let cv_only = resolver_from(&[("cv", "1..3")]);
        match RankRequest::resolve(None, None, &cv_only).unwrap() {
            Some(RankRequest::CrossValidated(c)) => assert_eq!(c, vec![1, 2, 3]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RankRequest::resolve(None, None, &resolver_from(&[]))
            .unwrap()
            .is_none());
    }

    #[test]
    fn designs_and_methods_parse_and_round_trip() {
        match parse_design("block:0.3").unwrap() {
            CovarianceDesign::Block { rho } => assert_eq!(rho, 0.3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_design("random").unwrap(),
            CovarianceDesign::RandomCorrelation
        ));
        assert!(parse_design("ring").is_err());
        assert_eq!(
            design_config_value(&parse_design("block:0.9").unwrap()),
            "block:0.9"
        );

        let methods = parse_methods("full_data,bayes_mipca").unwrap();
        assert_eq!(methods_config_value(&methods), "full_data,bayes_mipca");
        assert!(parse_methods("full_data,magic").is_err());
    }

    #[test]
    fn tab_delimiters_survive_the_config_round_trip() {
        assert_eq!(delimiter_to_config('\t'), "\\t");
        assert_eq!(delimiter_from_str("\\t").unwrap(), '\t');
        assert_eq!(delimiter_from_str(";").unwrap(), ';');
        assert!(delimiter_from_str("ab").is_err());
        assert!(delimiter_from_str("").is_err());
    }

    #[test]
    fn quantities_come_from_flags_or_the_config_entry() {
        let resolver = resolver_from(&[("quantity", "mean:1 corr:5,6")]);
        let from_config = resolve_quantities(&[], &resolver).unwrap();
        assert_eq!(
            from_config,
            vec![
                Quantity::Mean { col: 0 },
                Quantity::Correlation { a: 4, b: 5 }
            ]
        );
        let from_flags =
            resolve_quantities(&["reg:1~2,3".to_string()], &resolver).unwrap();
        assert_eq!(
            from_flags,
            vec![Quantity::Regression {
                response: 0,
                predictors: vec![1, 2]
            }]
        );
        assert_eq!(quantities_config_value(&from_config), "mean:1 corr:5,6");
    }

    #[test]
    fn command_line_parses_the_documented_surface() {
        let cli = Cli::try_parse_from([
            "mipca", "mi", "--rank", "2", "-M", "20", "--lstart", "1000", "--spacing", "100",
            "--seed", "1", "data.csv",
        ])
        .unwrap();
        match cli.command {
            Command::Mi(args) => {
                assert_eq!(args.input, Some(PathBuf::from("data.csv")));
                assert_eq!(args.fit.rank, Some(2));
                assert_eq!(args.imputations, Some(20));
                assert_eq!(args.lstart, Some(1000));
                assert_eq!(args.spacing, Some(100));
                assert_eq!(args.fit.seed, Some(1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Cli::try_parse_from(["mipca", "mi", "--rank", "2", "--cv", "1..3", "x.csv"])
            .is_err());
    }
}
