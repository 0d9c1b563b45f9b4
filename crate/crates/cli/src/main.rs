use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hojabr::check::check_program;
use hojabr::eval::{run_program, EvalConfig, Mode};
use hojabr::frontend::{einsum_to_hojabr, hojabr_to_einsum, hojabr_to_sql, parse_einsum, parse_sql, sql_to_hojabr, SqlSchema};
use hojabr::slang::{catalog, lift, slang, validate, JoinStrategy, LowerJoin, LowerTensor, TensorFormat};
use hojabr::store::{load_manifest, Database, Relation, Semiring};
use hojabr::{parse, print, Code, Diagnostic, Program};

#[derive(Parser)]
#[command(name = "hojabr", version, about = "Parse, check, run and transform Hojabr programs")]
struct Cli {
    /// Write diagnostics to stderr as JSON lines.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the syntax tree.
    Parse { program: PathBuf },
    /// Pretty-print in canonical layout.
    Fmt { program: PathBuf },
    /// Run static checks and data integrity checks.
    Check {
        program: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        strict: bool,
        /// Also require membership in this slang.
        #[arg(long)]
        slang: Option<String>,
    },
    /// Evaluate and print the derived relations.
    Run {
        program: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::SemiNaive)]
        mode: ModeArg,
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        output: OutputFormat,
        /// Only print these relations.
        #[arg(long = "relation", value_name = "NAME")]
        relations: Vec<String>,
        /// Write the run report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Apply a join or tensor-format lowering.
    Lower {
        program: PathBuf,
        #[arg(long, conflicts_with = "format", required_unless_present = "format")]
        strategy: Option<JoinStrategy>,
        #[arg(long)]
        format: Option<TensorFormat>,
        /// Tensors to re-encode; all input tensors when omitted.
        #[arg(long, value_delimiter = ',')]
        tensors: Vec<String>,
        /// Prefix for generated relation names.
        #[arg(long, default_value = "")]
        prefix: String,
    },
    /// Undo join lowerings.
    Lift { program: PathBuf },
    /// Translate between mini-SQL and Hojabr.
    Sql {
        input: PathBuf,
        #[command(flatten)]
        dir: Direction,
        /// JSON object of table name to column names.
        #[arg(long)]
        schema: PathBuf,
    },
    /// Translate between einsum lines and Hojabr.
    Einsum {
        input: PathBuf,
        #[command(flatten)]
        dir: Direction,
    },
    /// List the slang catalog.
    Slangs,
}

#[derive(Args)]
struct DataArgs {
    /// JSON data manifest.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Direction {
    #[arg(long)]
    to_hojabr: bool,
    #[arg(long)]
    from_hojabr: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Naive,
    SemiNaive,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

type Outcome = Result<String, Vec<Diagnostic>>;

struct Session {
    json: bool,
}

impl Session {
    fn emit(&self, diags: &[Diagnostic]) {
        let mut err = std::io::stderr().lock();
        for d in diags {
            let line = if self.json { d.to_json_line() } else { d.to_string() };
            let _ = writeln!(err, "{line}");
        }
    }
}

fn read(path: &Path) -> Result<String, Vec<Diagnostic>> {
    fs::read_to_string(path).map_err(|e| vec![Diagnostic::error(Code::Io, format!("{}: {e}", path.display()))])
}

fn program(path: &Path) -> Result<Program, Vec<Diagnostic>> {
    parse(&read(path)?).map_err(|d| vec![d])
}

fn database(data: &DataArgs) -> Result<Database, Vec<Diagnostic>> {
    match &data.data {
        Some(m) => load_manifest(m).map_err(|e| vec![e.into()]),
        None => Ok(Database::new()),
    }
}

fn split_errors(diags: Vec<Diagnostic>) -> (Vec<Diagnostic>, bool) {
    let failed = diags.iter().any(Diagnostic::is_error);
    (diags, failed)
}

fn csv_text(rel: &Relation) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = match rel.columns() {
        Some(cols) if cols.len() == rel.arity() => cols.to_vec(),
        _ => (0..rel.arity()).map(|k| format!("c{k}")).collect(),
    };
    let valued = rel.semiring() != Semiring::Bool;
    if valued {
        header.push("__val".into());
    }
    w.write_record(&header).expect("in-memory write");
    for (key, val) in rel.entries() {
        let mut row: Vec<String> = key.iter().map(|v| v.to_plain()).collect();
        if valued {
            row.push(val.to_plain());
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input")
}

fn relation_json(rel: &Relation) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = rel
        .entries()
        .into_iter()
        .map(|(key, val)| serde_json::json!({ "key": key, "value": val }))
        .collect();
    serde_json::json!({
        "semiring": rel.semiring(),
        "levels": rel.levels(),
        "entries": rows,
    })
}

fn exec(cmd: Cmd, s: &Session) -> Outcome {
    match cmd {
        Cmd::Parse { program: path } => Ok(format!("{:#?}\n", program(&path)?)),
        Cmd::Fmt { program: path } => Ok(print(&program(&path)?)),
        Cmd::Check {
            program: path,
            data,
            strict,
            slang: wanted,
        } => {
            let p = program(&path)?;
            let db = database(&data)?;
            let mut diags = match check_program(&p, &db, strict) {
                Ok(c) => c.diagnostics,
                Err(ds) => ds,
            };
            if let Some(name) = wanted {
                let spec = slang(&name)
                    .ok_or_else(|| vec![Diagnostic::error(Code::SlangViolation, format!("unknown slang {name}"))])?;
                let v = validate(&p, &spec);
                diags.extend(v.violations.iter().map(|x| x.to_diagnostic(&name, &p)));
            }
            let (diags, failed) = split_errors(diags);
            if failed {
                return Err(diags);
            }
            s.emit(&diags);
            Ok(format!("ok: {} rules\n", p.rules.len()))
        }
        Cmd::Run {
            program: path,
            data,
            mode,
            strict,
            output,
            relations,
            report,
        } => {
            let p = program(&path)?;
            let cfg = EvalConfig {
                mode: match mode {
                    ModeArg::Naive => Mode::Naive,
                    ModeArg::SemiNaive => Mode::SemiNaive,
                },
                strict,
                ..EvalConfig::default()
            };
            let (db, rep) = run_program(&p, database(&data)?, &cfg)?;
            s.emit(&rep.warnings);
            if let Some(r) = report {
                fs::write(&r, rep.to_json())
                    .map_err(|e| vec![Diagnostic::error(Code::Io, format!("{}: {e}", r.display()))])?;
            }
            let names = if relations.is_empty() { p.head_relations() } else { relations };
            let mut out = String::new();
            let mut docs = serde_json::Map::new();
            for name in names {
                let rel = db
                    .get(&name)
                    .ok_or_else(|| vec![Diagnostic::error(Code::UndeclaredRelation, format!("no relation {name}"))])?;
                match output {
                    OutputFormat::Csv => {
                        out.push_str(&format!("# {name}\n"));
                        out.push_str(&csv_text(rel));
                    }
                    OutputFormat::Json => {
                        docs.insert(name, relation_json(rel));
                    }
                }
            }
            if let OutputFormat::Json = output {
                out = serde_json::to_string_pretty(&docs).expect("json values serialize") + "\n";
            }
            Ok(out)
        }
        Cmd::Lower {
            program: path,
            strategy,
            format,
            tensors,
            prefix,
        } => {
            let p = program(&path)?;
            let lowered = match (strategy, format) {
                (Some(strategy), _) => LowerJoin { strategy, prefix }.apply(&p)?,
                (None, Some(format)) => LowerTensor { tensors, prefix }.apply(&p, format)?.0,
                (None, None) => unreachable!("clap requires one of the two"),
            };
            Ok(print(&lowered))
        }
        Cmd::Lift { program: path } => Ok(print(&lift(&program(&path)?)?)),
        Cmd::Sql { input, dir, schema } => {
            let schema: SqlSchema = serde_json::from_str(&read(&schema)?)
                .map_err(|e| vec![Diagnostic::error(Code::Io, format!("{}: {e}", schema.display()))])?;
            let text = read(&input)?;
            if dir.to_hojabr {
                let queries: Vec<&str> = text.split(';').map(str::trim).filter(|q| !q.is_empty()).collect();
                let mut rules = Vec::new();
                for (k, q) in queries.iter().enumerate() {
                    let head = if queries.len() == 1 { "Q".to_string() } else { format!("Q{}", k + 1) };
                    let q = parse_sql(q).map_err(|d| vec![d])?;
                    rules.extend(sql_to_hojabr(&q, &schema, &head).map_err(|d| vec![d])?.rules);
                }
                Ok(print(&Program::new(rules)))
            } else {
                let p = parse(&text).map_err(|d| vec![d])?;
                let mut out = String::new();
                for r in p.rules {
                    out.push_str(&format!("{};\n", hojabr_to_sql(&Program::new(vec![r]), &schema)?));
                }
                Ok(out)
            }
        }
        Cmd::Einsum { input, dir } => {
            let text = read(&input)?;
            if dir.to_hojabr {
                let mut rules = Vec::new();
                for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                    let e = parse_einsum(line).map_err(|d| vec![d])?;
                    rules.extend(einsum_to_hojabr(&e).map_err(|d| vec![d])?.rules);
                }
                Ok(print(&Program::new(rules)))
            } else {
                let p = parse(&text).map_err(|d| vec![d])?;
                let mut out = String::new();
                for r in p.rules {
                    out.push_str(&format!("{}\n", hojabr_to_einsum(&Program::new(vec![r]))?));
                }
                Ok(out)
            }
        }
        Cmd::Slangs => Ok(catalog().iter().map(|s| s.to_string()).collect::<Vec<_>>().join("\n")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let session = Session { json: cli.json };
    match exec(cli.cmd, &session) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(diags) => {
            session.emit(&diags);
            ExitCode::from(1)
        }
    }
}
