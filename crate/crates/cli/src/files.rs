//! On-disk formats for everything the harness produces or consumes:
//! SCMs and graph beliefs as JSON, datasets and run logs as CSV, model
//! checkpoints as a small versioned binary, and the two DAG text forms.
//!
//! CSV numbers are written with Rust's shortest-round-trip float
//! formatting, so reading a file back reproduces every value bit-exactly.
//! Structured values parsed from JSON are revalidated through the core
//! constructors; a hand-edited file cannot smuggle in shapes the library
//! would never build.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use causalprobe_core::condmodel::{ConditionalModel, ConditionalModelSet, ModelSpec};
use causalprobe_core::graph::Dag;
use causalprobe_core::graphbelief::GraphBelief;
use causalprobe_core::metrics::{RoundEntry, RunRecord};
use causalprobe_core::scm::{CategoricalScm, Cpt, Dataset};
use causalprobe_core::targeting::{ScoreVector, StrategyKind};

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// JSON forms: SCM, belief, DAG.

pub fn write_scm(path: &Path, scm: &CategoricalScm) -> Result<()> {
    write_json(path, scm)
}

/// Reads an SCM and rebuilds every piece through its validating
/// constructor — deserialization alone would trust the file's shapes, row
/// sums, and acyclicity.
pub fn read_scm(path: &Path) -> Result<CategoricalScm> {
    let scm: CategoricalScm = serde_json::from_str(&fs::read_to_string(path)?)?;
    let dag = Dag::new(scm.dag().n(), scm.dag().adjacency().to_vec())?;
    let mut cpts = Vec::with_capacity(scm.cpts().len());
    for c in scm.cpts() {
        cpts.push(Cpt::new(
            c.node(),
            c.parents().to_vec(),
            c.parent_cards().to_vec(),
            c.card(),
            c.table().to_vec(),
        )?);
    }
    Ok(CategoricalScm::new(
        dag,
        scm.cardinalities().to_vec(),
        cpts,
    )?)
}

pub fn write_belief(path: &Path, belief: &GraphBelief) -> Result<()> {
    write_json(path, belief)
}

pub fn read_belief(path: &Path) -> Result<GraphBelief> {
    let belief: GraphBelief = serde_json::from_str(&fs::read_to_string(path)?)?;
    let n = belief.n();
    if belief.gamma_matrix().len() != n * n || belief.theta_matrix().len() != n * n {
        return Err(Error::Format(format!(
            "belief file {}: matrix sizes do not match {n} nodes",
            path.display()
        )));
    }
    Ok(belief)
}

/// Adjacency matrix as a JSON array-of-arrays of 0/1.
pub fn write_dag_json(path: &Path, dag: &Dag) -> Result<()> {
    write_json(path, &dag.adjacency_rows())
}

pub fn read_dag_json(path: &Path) -> Result<Dag> {
    let rows: Vec<Vec<u8>> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let n = rows.len();
    let mut adj = Vec::with_capacity(n * n);
    for row in &rows {
        if row.len() != n {
            return Err(Error::Format(format!(
                "adjacency file {}: matrix is not square",
                path.display()
            )));
        }
        adj.extend_from_slice(row);
    }
    Ok(Dag::new(n, adj)?)
}

/// Human-inspectable edge list, one `i -> j` per line.
pub fn edge_list_text(dag: &Dag) -> String {
    let mut out = String::new();
    for (i, j) in dag.edges() {
        out.push_str(&format!("{i} -> {j}\n"));
    }
    out
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset CSV.

/// Header row of node names, one integer category value per cell;
/// interventional datasets carry a `# intervention=<node>` comment first.
pub fn write_dataset(path: &Path, data: &Dataset, names: &[String]) -> Result<()> {
    if names.len() != data.nodes() {
        return Err(Error::Format(format!(
            "{} names for {} nodes",
            names.len(),
            data.nodes()
        )));
    }
    let mut f = BufWriter::new(fs::File::create(path)?);
    if let Some(node) = data.intervention() {
        writeln!(f, "# intervention={node}")?;
    }
    let mut w = csv::Writer::from_writer(f);
    w.write_record(names)?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, Vec<String>)> {
    let text = fs::read_to_string(path)?;
    let (intervention, body) = match text.strip_prefix("# intervention=") {
        Some(rest) => {
            let (num, body) = rest.split_once('\n').ok_or_else(|| {
                Error::Format(format!("{}: nothing after intervention line", path.display()))
            })?;
            let node = num.trim().parse::<usize>().map_err(|_| {
                Error::Format(format!("{}: bad intervention node `{num}`", path.display()))
            })?;
            (Some(node), body)
        }
        None => (None, text.as_str()),
    };
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut values = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != names.len() {
            return Err(Error::Format(format!(
                "{}: row has {} cells, header has {}",
                path.display(),
                record.len(),
                names.len()
            )));
        }
        for cell in record.iter() {
            values.push(cell.parse::<u8>().map_err(|_| {
                Error::Format(format!("{}: bad category value `{cell}`", path.display()))
            })?);
        }
    }
    Ok((Dataset::new(names.len(), values, intervention)?, names))
}

/// Default node names when a source has none: `x0, x1, ...`.
pub fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

// ---------------------------------------------------------------------------
// Run log CSV.

/// Writes the per-round log: `round, target, shd, score_<node>...`, the
/// shadow scorer's columns when present, and the structural gradient
/// norms. Round 0 holds the observational-only distance; its target and
/// score cells are empty. `# method=` and `# seed=` comment lines make the
/// file self-describing for later aggregation.
pub fn write_run_csv(path: &Path, record: &RunRecord, n: usize) -> Result<()> {
    let has_shadow = record.rounds.iter().any(|r| r.shadow.is_some());
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "# method={}", record.method)?;
    writeln!(f, "# seed={}", record.seed)?;
    let mut w = csv::Writer::from_writer(f);

    let mut header = vec!["round".to_string(), "target".into(), "shd".into()];
    header.extend((0..n).map(|i| format!("score_{i}")));
    if has_shadow {
        header.extend((0..n).map(|i| format!("shadow_score_{i}")));
    }
    header.push("gamma_grad_norm".into());
    header.push("theta_grad_norm".into());
    w.write_record(&header)?;

    let width = header.len();
    let mut row = vec![String::new(); width];
    row[0] = "0".into();
    row[2] = record.initial_shd.to_string();
    w.write_record(&row)?;

    for entry in &record.rounds {
        let mut row = vec![String::new(); width];
        row[0] = entry.round.to_string();
        row[1] = entry.target.to_string();
        row[2] = entry.shd.to_string();
        for (i, s) in entry.scores.scores.iter().enumerate() {
            row[3 + i] = s.to_string();
        }
        if has_shadow {
            if let Some(shadow) = &entry.shadow {
                for (i, s) in shadow.scores.iter().enumerate() {
                    row[3 + n + i] = s.to_string();
                }
            }
        }
        if let Some([g, t]) = entry.grad_norms {
            row[width - 2] = g.to_string();
            row[width - 1] = t.to_string();
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_csv(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path)?;
    let mut method: Option<StrategyKind> = None;
    let mut seed: Option<u64> = None;
    let mut body_start = 0;
    for line in text.lines() {
        if !line.starts_with('#') {
            break;
        }
        body_start += line.len() + 1;
        if let Some(v) = line.strip_prefix("# method=") {
            method = Some(StrategyKind::from_str(v.trim()).map_err(causalprobe_core::Error::from)?);
        } else if let Some(v) = line.strip_prefix("# seed=") {
            seed = Some(v.trim().parse().map_err(|_| {
                Error::Format(format!("{}: bad seed `{v}`", path.display()))
            })?);
        }
    }
    let method = method
        .ok_or_else(|| Error::Format(format!("{}: missing `# method=`", path.display())))?;
    let seed =
        seed.ok_or_else(|| Error::Format(format!("{}: missing `# seed=`", path.display())))?;

    let mut r = csv::Reader::from_reader(text[body_start.min(text.len())..].as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let n = header.iter().filter(|h| h.starts_with("score_")).count();
    let has_shadow = header.iter().any(|h| h.starts_with("shadow_score_"));
    let width = header.len();
    let norm_cols = width - 2;

    let parse_f64 = |cell: &str| -> Result<f64> {
        cell.parse::<f64>()
            .map_err(|_| Error::Format(format!("{}: bad number `{cell}`", path.display())))
    };

    let mut initial_shd = None;
    let mut rounds: Vec<RoundEntry> = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Format(format!(
                "{}: row has {} cells, header has {width}",
                path.display(),
                record.len()
            )));
        }
        let round: u64 = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad round `{}`", path.display(), &record[0])))?;
        let shd: usize = record[2]
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad shd `{}`", path.display(), &record[2])))?;
        if round == 0 {
            initial_shd = Some(shd);
            continue;
        }
        let target: usize = record[1].parse().map_err(|_| {
            Error::Format(format!("{}: bad target `{}`", path.display(), &record[1]))
        })?;
        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            scores.push(parse_f64(&record[3 + i])?);
        }
        let shadow = if has_shadow && !record[3 + n].is_empty() {
            let mut s = Vec::with_capacity(n);
            for i in 0..n {
                s.push(parse_f64(&record[3 + n + i])?);
            }
            Some(ScoreVector {
                kind: StrategyKind::GitPrivileged,
                round,
                scores: s,
            })
        } else {
            None
        };
        let grad_norms = if record[norm_cols].is_empty() {
            None
        } else {
            Some([parse_f64(&record[norm_cols])?, parse_f64(&record[norm_cols + 1])?])
        };
        rounds.push(RoundEntry {
            round,
            target,
            scores: ScoreVector {
                kind: method,
                round,
                scores,
            },
            shd,
            shadow,
            grad_norms,
        });
    }

    let initial_shd = initial_shd
        .ok_or_else(|| Error::Format(format!("{}: missing round-0 row", path.display())))?;
    let mut out = RunRecord::new(method, seed, initial_shd);
    out.rounds = rounds;
    out.validate()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Model checkpoints.

const MODELS_MAGIC: &[u8; 4] = b"CPMB";
const MODELS_VERSION: u32 = 1;

/// Versioned binary checkpoint: magic, version, node count, then per model
/// its node index, kind, the full cardinality vector, and the flat
/// parameter array as little-endian f64. Optimizer state is deliberately
/// not persisted; a reloaded set starts with fresh moments.
pub fn write_models(path: &Path, models: &ConditionalModelSet) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(MODELS_MAGIC)?;
    f.write_all(&MODELS_VERSION.to_le_bytes())?;
    f.write_all(&(models.n() as u32).to_le_bytes())?;
    for model in models.models() {
        f.write_all(&(model.node() as u32).to_le_bytes())?;
        match model.spec() {
            ModelSpec::Table => {
                f.write_all(&[0u8])?;
                f.write_all(&[0u8; 8])?;
            }
            ModelSpec::Net { embed, hidden } => {
                f.write_all(&[1u8])?;
                f.write_all(&(embed as u32).to_le_bytes())?;
                f.write_all(&(hidden as u32).to_le_bytes())?;
            }
        }
        f.write_all(&(model.cards().len() as u32).to_le_bytes())?;
        for &c in model.cards() {
            f.write_all(&(c as u32).to_le_bytes())?;
        }
        f.write_all(&(model.params().len() as u64).to_le_bytes())?;
        for &p in model.params() {
            f.write_all(&p.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_models(path: &Path) -> Result<ConditionalModelSet> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if r.take(4)? != MODELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != MODELS_VERSION {
        return Err(Error::Format(format!(
            "{}: checkpoint version {version}, this build reads {MODELS_VERSION}",
            path.display()
        )));
    }
    let n = r.u32()? as usize;
    let mut models = Vec::with_capacity(n);
    for _ in 0..n {
        let node = r.u32()? as usize;
        let spec = match r.u8()? {
            0 => {
                r.take(8)?;
                ModelSpec::Table
            }
            1 => ModelSpec::Net {
                embed: r.u32()? as usize,
                hidden: r.u32()? as usize,
            },
            k => {
                return Err(Error::Format(format!(
                    "{}: unknown model kind tag {k}",
                    path.display()
                )))
            }
        };
        let cards_len = r.u32()? as usize;
        let mut cards = Vec::with_capacity(cards_len);
        for _ in 0..cards_len {
            cards.push(r.u32()? as usize);
        }
        let param_len = r.u64()? as usize;
        let mut params = Vec::with_capacity(param_len);
        for _ in 0..param_len {
            params.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        models.push(ConditionalModel::from_spec(node, &cards, spec, params)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes after last model",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    Ok(ConditionalModelSet::from_models(models)?)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, count: usize) -> Result<&'a [u8]> {
        if self.pos + count > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint (wanted {count} bytes at offset {})",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + count];
        self.pos += count;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

// ---------------------------------------------------------------------------
// Aggregate tables.

/// Writes a simple rectangular CSV; the suite composes the cells.
pub fn write_table_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
