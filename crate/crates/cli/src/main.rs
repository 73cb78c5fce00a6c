// SPDX-License-Identifier: Apache-2.0

//! `encdict`: build, query, audit, benchmark and mutate encrypted column
//! stores.
//!
//! Exit codes: 0 on success, 2 on input errors, 3 on cryptographic errors
//! (wrong key, tampered data, malformed tokens).

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use encdict::bench::run_bench;
use encdict::builder::{build, BuildParams};
use encdict::crypto::{pae_gen, MasterKey};
use encdict::engine::leakage_profile;
use encdict::proxy::normalize_filter;
use encdict::{storage, DynamicColumn, EdKind, Error, Filter, PlainColumn, Repetition, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Parser)]
#[command(name = "encdict", version, about = "Encrypted dictionary column stores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Main,
    Delta,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Main => Side::Main,
            SideArg::Delta => Side::Delta,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random master key file (32 hex digits).
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encrypt a one-value-per-line file into a store directory.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        column: String,
        /// 1..9 or `plain`.
        #[arg(long)]
        ed: EdKind,
        #[arg(long)]
        bs_max: Option<u32>,
        /// Defaults to the longest value in the input.
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a filter and print matching values in row order.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        /// `eq V`, `lt V`, `le V`, `gt V`, `ge V`, `range [V,W]` (brackets
        /// `[`/`(` and `]`/`)` pick inclusive or exclusive ends).
        #[arg(long)]
        filter: String,
        #[arg(long)]
        count_only: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report the frequency histogram and order class of a store.
    Audit {
        #[arg(long)]
        store: PathBuf,
    },
    /// Run random range queries and report enclave loads, scan time and
    /// result sizes.
    Bench {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long, default_value_t = 500)]
        queries: usize,
        #[arg(long)]
        range_size: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Append a value to the delta store.
    Append {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long)]
        value: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mark a row deleted.
    Delete {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value = "main")]
        side: SideArg,
        #[arg(long)]
        rid: u32,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Delete a row and append its new value to the delta store.
    Update {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long, value_enum, default_value = "main")]
        side: SideArg,
        #[arg(long)]
        rid: u32,
        #[arg(long)]
        value: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild the main store from all live rows and empty the delta.
    Merge {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Lib(Error),
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = Result<(), Failure>;

fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn read_key(path: &Path) -> Result<MasterKey, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(MasterKey::from_hex(&text)?)
}

fn read_values(path: &Path) -> Result<Vec<Vec<u8>>, Failure> {
    let text = fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if std::str::from_utf8(&text).is_err() {
        return Err(Failure::Input(format!("{}: not valid UTF-8", path.display())));
    }
    let mut lines: Vec<Vec<u8>> = text
        .split(|&b| b == b'\n')
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l).to_vec())
        .collect();
    if text.ends_with(b"\n") || text.is_empty() {
        lines.pop();
    }
    Ok(lines)
}

fn out() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn emit(f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> CmdResult {
    let mut w = out();
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::Input(format!("stdout: {e}")))
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Keygen { out: path, seed } => {
            let key = pae_gen(&mut rng(seed));
            fs::write(&path, key.to_hex_line()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            emit(|w| writeln!(w, "wrote key to {}", path.display()))
        }
        Command::Build {
            input,
            table,
            column,
            ed,
            bs_max,
            max_len,
            key_file,
            seed,
            out: dir,
        } => {
            let mk = read_key(&key_file)?;
            let values = read_values(&input)?;
            let col = match max_len {
                Some(l) => PlainColumn::new(values, l)?,
                None => PlainColumn::from_values(values)?,
            };
            if bs_max.is_some() && (ed.is_plain() || ed.repetition() != Repetition::Smoothing) {
                return Err(Failure::Input(format!("--bs-max only applies to ED4, ED5 and ED6, not {ed}")));
            }
            let params = BuildParams { kind: ed, bs_max };
            let mut rng = rng(seed);
            let store = build(&col, &params, &mk, &table, &column, &mut rng)?;
            storage::save(&store, &dir, &mut rng)?;
            let bytes = storage::disk_usage(&dir)?;
            emit(|w| {
                writeln!(w, "kind: {}", store.kind)?;
                writeln!(w, "|D| = {}", store.dict_len())?;
                writeln!(w, "|AV| = {}", store.row_count())?;
                writeln!(w, "bytes on disk = {bytes}")
            })
        }
        Command::Query {
            store,
            key_file,
            filter,
            count_only,
            seed,
        } => {
            let mk = read_key(&key_file)?;
            let filter: Filter = filter.parse()?;
            let range = normalize_filter(&filter)?;
            let dc = storage::load_dynamic(&store)?;
            let result = dc.query(&range, &mk, &mut rng(seed))?;
            emit(|w| {
                if count_only {
                    return writeln!(w, "{}", result.rows.len());
                }
                for row in &result.rows {
                    w.write_all(row)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })
        }
        Command::Audit { store } => {
            let dc = storage::load_dynamic(&store)?;
            let report = leakage_profile(&dc.main);
            emit(|w| {
                writeln!(w, "{report}")?;
                writeln!(w, "rows: {} main, {} delta, {} live", dc.main.row_count(), dc.delta.row_count(), dc.live_rows())
            })
        }
        Command::Bench {
            store,
            key_file,
            queries,
            range_size,
            workers,
            seed,
        } => {
            let mk = read_key(&key_file)?;
            let s = storage::load(&store)?;
            let r = run_bench(&s, &mk, queries, range_size, workers, &mut rng(seed))?;
            emit(|w| {
                writeln!(w, "kind: {}", s.kind)?;
                writeln!(w, "|D| = {}, distinct values = {}, |AV| = {}", s.dict_len(), r.distinct_values, s.row_count())?;
                writeln!(w, "queries = {}, range size = {}", r.queries, r.range_size)?;
                writeln!(w, "mean enclave loads = {:.2} (max {})", r.mean_loads, r.max_loads)?;
                writeln!(w, "mean scan time = {:.3} ms", r.mean_scan.as_secs_f64() * 1e3)?;
                writeln!(w, "mean result cardinality = {:.2}", r.mean_cardinality)?;
                writeln!(w, "peak decrypted values held = {}", r.max_peak_held)
            })
        }
        Command::Append {
            store,
            key_file,
            value,
            seed,
        } => {
            let mk = read_key(&key_file)?;
            let mut rng = rng(seed);
            let mut dc = storage::load_dynamic(&store)?;
            let rid = dc.append(value.as_bytes(), &mk, &mut rng)?;
            storage::save_dynamic(&dc, &store, &mut rng)?;
            emit(|w| writeln!(w, "appended delta rid {rid}"))
        }
        Command::Delete { store, side, rid, seed } => {
            let mut dc = storage::load_dynamic(&store)?;
            dc.delete(side.into(), rid)?;
            storage::save_dynamic(&dc, &store, &mut rng(seed))?;
            emit(|w| writeln!(w, "deleted {} rid {rid}", side_name(side)))
        }
        Command::Update {
            store,
            key_file,
            side,
            rid,
            value,
            seed,
        } => {
            let mk = read_key(&key_file)?;
            let mut rng = rng(seed);
            let mut dc = storage::load_dynamic(&store)?;
            let new_rid = dc.update(side.into(), rid, value.as_bytes(), &mk, &mut rng)?;
            storage::save_dynamic(&dc, &store, &mut rng)?;
            emit(|w| writeln!(w, "deleted {} rid {rid}, appended delta rid {new_rid}", side_name(side)))
        }
        Command::Merge { store, key_file, seed } => {
            let mk = read_key(&key_file)?;
            let mut rng = rng(seed);
            let dc = storage::load_dynamic(&store)?;
            let merged: DynamicColumn = dc.merge(&mk, &mut rng)?;
            storage::save_dynamic(&merged, &store, &mut rng)?;
            emit(|w| {
                writeln!(w, "merged into {} with {} rows", merged.main.kind, merged.main.row_count())?;
                writeln!(w, "|D| = {}", merged.main.dict_len())
            })
        }
    }
}

fn side_name(s: SideArg) -> &'static str {
    match s {
        SideArg::Main => "main",
        SideArg::Delta => "delta",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_crypto() { 3 } else { 2 })
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
