use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{CitationCorpus, EdgeCleanup, NodeId, PaperNode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestPaths {
    pub edges: PathBuf,
    pub meta: PathBuf,
    /// CSV (`id,f1..fn`) or raw little-endian f32 with a `{"count","dim"}`
    /// JSON sidecar; binary rows follow metadata row order.
    pub embed: PathBuf,
    /// Optional CSV `id,year`; an empty year is missing.
    pub years: Option<PathBuf>,
    /// First edge row is a header.
    pub edge_header: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub node_count: usize,
    pub edge_count: usize,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

#[derive(Deserialize)]
struct Sidecar {
    count: usize,
    dim: usize,
}

/// Reads the three input files and builds a corpus with dense ids assigned
/// in ascending original-id order.
pub fn ingest_corpus(paths: &IngestPaths) -> Result<(CitationCorpus, IngestReport)> {
    let meta_rows = read_feature_csv(&paths.meta, "meta")?;
    let f_meta = meta_rows.first().map(|r| r.values.len()).unwrap_or(0);
    if meta_rows.is_empty() || f_meta == 0 {
        return Err(Error::Schema(format!(
            "{}: no metadata columns",
            paths.meta.display()
        )));
    }
    check_width(&meta_rows, f_meta, "meta")?;

    let embed_rows = if is_binary(&paths.embed) {
        read_embedding_bin(&paths.embed, &meta_rows)?
    } else {
        read_feature_csv(&paths.embed, "embedding")?
    };
    if embed_rows.len() != meta_rows.len() {
        return Err(Error::Schema(format!(
            "{} embedding rows for {} metadata rows",
            embed_rows.len(),
            meta_rows.len()
        )));
    }
    let f_embed = embed_rows[0].values.len();
    check_width(&embed_rows, f_embed, "embedding")?;

    let mut by_id: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &meta_rows {
        if by_id.insert(r.id, r.values.clone()).is_some() {
            return Err(Error::Parse {
                path: paths.meta.clone(),
                line: r.line,
                msg: format!("duplicate id {}", r.id),
            });
        }
    }
    let mut embed_by_id: HashMap<u64, (u64, Vec<f64>)> = HashMap::new();
    for r in embed_rows {
        if !by_id.contains_key(&r.id) {
            return Err(Error::Parse {
                path: paths.embed.clone(),
                line: r.line,
                msg: format!("id {} has no metadata row", r.id),
            });
        }
        if embed_by_id.insert(r.id, (r.line, r.values)).is_some() {
            return Err(Error::Schema(format!("duplicate embedding for id {}", r.id)));
        }
    }

    let mut years: HashMap<u64, i32> = HashMap::new();
    if let Some(path) = &paths.years {
        for (line, rec) in data_records(path)? {
            let id = parse_u64(path, line, rec.get(0))?;
            let y = rec.get(1).unwrap_or("").trim();
            if !y.is_empty() {
                let year = y.parse::<i32>().map_err(|_| Error::Parse {
                    path: path.clone(),
                    line,
                    msg: format!("bad year {y:?}"),
                })?;
                years.insert(id, year);
            }
        }
    }

    let nodes: Vec<PaperNode> = by_id
        .into_iter()
        .enumerate()
        .map(|(i, (orig, meta))| PaperNode {
            id: NodeId(i),
            original_id: orig,
            year: years.get(&orig).copied(),
            meta,
            embedding: embed_by_id.remove(&orig).map(|(_, v)| v).unwrap_or_default(),
        })
        .collect();
    let index: HashMap<u64, NodeId> = nodes.iter().map(|n| (n.original_id, n.id)).collect();

    let mut edges = Vec::new();
    let mut first = true;
    for (line, rec) in csv_records(&paths.edges)? {
        if std::mem::take(&mut first) && paths.edge_header {
            continue;
        }
        if rec.len() != 2 {
            return Err(Error::Parse {
                path: paths.edges.clone(),
                line,
                msg: format!("expected 2 columns `citing,cited`, got {}", rec.len()),
            });
        }
        let endpoint = |field: Option<&str>| -> Result<NodeId> {
            let id = parse_u64(&paths.edges, line, field)?;
            index.get(&id).copied().ok_or_else(|| Error::Parse {
                path: paths.edges.clone(),
                line,
                msg: format!("unknown node id {id}"),
            })
        };
        let a = endpoint(rec.get(0))?;
        let b = endpoint(rec.get(1))?;
        edges.push((a, b));
    }

    let (corpus, EdgeCleanup { self_loops, duplicates }) =
        CitationCorpus::new(nodes, edges, f_meta, f_embed)?;
    if self_loops + duplicates > 0 {
        log::warn!("dropped {self_loops} self-loops and {duplicates} duplicate edges");
    }
    let report = IngestReport {
        node_count: corpus.node_count(),
        edge_count: corpus.edge_count(),
        self_loops_dropped: self_loops,
        duplicates_dropped: duplicates,
    };
    Ok((corpus, report))
}

/// Reads `id,label` rows keyed by original id.
pub fn read_provided_labels(path: &Path) -> Result<BTreeMap<u64, usize>> {
    let mut out = BTreeMap::new();
    for (line, rec) in data_records(path)? {
        let id = parse_u64(path, line, rec.get(0))?;
        let raw = rec.get(1).unwrap_or("").trim();
        let label = raw.parse::<usize>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("bad label {raw:?}"),
        })?;
        if out.insert(id, label).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("duplicate label for id {id}"),
            });
        }
    }
    Ok(out)
}

struct FeatureRow {
    id: u64,
    line: u64,
    values: Vec<f64>,
}

fn is_binary(path: &Path) -> bool {
    !matches!(
        path.extension().and_then(|e| e.to_str()),
        Some(ext) if ext.eq_ignore_ascii_case("csv")
    )
}

fn check_width(rows: &[FeatureRow], width: usize, what: &str) -> Result<()> {
    for r in rows {
        if r.values.len() != width {
            return Err(Error::Schema(format!(
                "node {} has {what} length {}, expected {width} (line {})",
                r.id,
                r.values.len(),
                r.line
            )));
        }
    }
    Ok(())
}

/// Records with their 1-based line numbers.
fn csv_records(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

/// Like [`csv_records`], but a first row whose first field is not an
/// integer is treated as a header and skipped.
fn data_records(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut recs = csv_records(path)?;
    if recs
        .first()
        .is_some_and(|(_, r)| r.get(0).unwrap_or("").parse::<u64>().is_err())
    {
        recs.remove(0);
    }
    Ok(recs)
}

fn read_feature_csv(path: &Path, what: &str) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (line, rec) in data_records(path)? {
        let id = parse_u64(path, line, rec.get(0))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("bad {what} value {f:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow { id, line, values });
    }
    Ok(rows)
}

fn read_embedding_bin(path: &Path, meta_rows: &[FeatureRow]) -> Result<Vec<FeatureRow>> {
    let mut sidecar_path = path.as_os_str().to_owned();
    sidecar_path.push(".json");
    let sidecar_path = PathBuf::from(sidecar_path);
    let sidecar_path = if sidecar_path.exists() {
        sidecar_path
    } else {
        path.with_extension("json")
    };
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: sidecar_path.clone(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if side.dim == 0 || bytes.len() != side.count * side.dim * 4 {
        return Err(Error::Schema(format!(
            "{}: {} bytes for count={} dim={}",
            path.display(),
            bytes.len(),
            side.count,
            side.dim
        )));
    }
    if side.count != meta_rows.len() {
        return Err(Error::Schema(format!(
            "{} embedding rows for {} metadata rows",
            side.count,
            meta_rows.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(values
        .chunks(side.dim)
        .zip(meta_rows)
        .enumerate()
        .map(|(i, (row, m))| FeatureRow {
            id: m.id,
            line: i as u64 + 1,
            values: row.to_vec(),
        })
        .collect())
}

fn parse_u64(path: &Path, line: u64, field: Option<&str>) -> Result<u64> {
    let f = field.unwrap_or("");
    f.parse::<u64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad node id {f:?}"),
    })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn paths(dir: &Path, edges: &str, meta: &str, embed: &str) -> IngestPaths {
        IngestPaths {
            edges: write(dir, "edges.csv", edges),
            meta: write(dir, "meta.csv", meta),
            embed: write(dir, "embed.csv", embed),
            years: None,
            edge_header: false,
        }
    }

    const META: &str = "10,0.1,0.2\n11,0.3,0.4\n12,0.5,0.6\n";
    const EMBED: &str = "10,1,2,3,4\n11,1,2,3,4\n12,1,2,3,4\n";

    #[test]
    fn tiny_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(dir.path(), "12,11\n11,10\n", META, EMBED);
        let (c, r) = ingest_corpus(&p).unwrap();
        assert_eq!((c.node_count(), c.edge_count()), (3, 2));
        assert_eq!((c.f_meta(), c.f_embed()), (2, 4));
        assert_eq!(r.self_loops_dropped, 0);
        assert_eq!(c.lookup(12), Some(NodeId(2)));
        assert_eq!(c.references(NodeId(2)), &[NodeId(1)]);
    }

    #[test]
    fn self_loop_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let meta = "5,1\n6,2\n";
        let embed = "5,1\n6,1\n";
        let p = paths(dir.path(), "5,5\n6,5\n6,5\n", meta, embed);
        let (c, r) = ingest_corpus(&p).unwrap();
        assert_eq!(r.self_loops_dropped, 1);
        assert_eq!(r.duplicates_dropped, 1);
        assert_eq!(c.edge_count(), 1);
    }

    #[test]
    fn ragged_meta_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let meta = "10,0.1,0.2\n11,0.3,0.4,0.9\n12,0.5,0.6\n";
        let p = paths(dir.path(), "12,11\n", meta, EMBED);
        assert!(matches!(ingest_corpus(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(dir.path(), "12,11\n11,abc\n", META, EMBED);
        match ingest_corpus(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_endpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(dir.path(), "12,99\n", META, EMBED);
        assert!(matches!(ingest_corpus(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn headers_and_years() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = paths(
            dir.path(),
            "citing,cited\n12,11\n",
            &format!("id,a,b\n{META}"),
            EMBED,
        );
        p.edge_header = true;
        p.years = Some(write(dir.path(), "years.csv", "id,year\n10,1999\n11,\n"));
        let (c, _) = ingest_corpus(&p).unwrap();
        assert_eq!(c.node(NodeId(0)).unwrap().year, Some(1999));
        assert_eq!(c.node(NodeId(1)).unwrap().year, None);
        assert_eq!(c.edge_count(), 1);
    }

    #[test]
    fn binary_embeddings_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = paths(dir.path(), "12,11\n", META, EMBED);
        let bin = dir.path().join("embed.bin");
        let mut bytes = Vec::new();
        for i in 0..6 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        fs::write(&bin, bytes).unwrap();
        write(dir.path(), "embed.bin.json", r#"{"count":3,"dim":2}"#);
        p.embed = bin;
        let (c, _) = ingest_corpus(&p).unwrap();
        assert_eq!(c.f_embed(), 2);
        assert_eq!(c.node(NodeId(2)).unwrap().embedding, vec![4.0, 5.0]);
    }

    #[test]
    fn row_count_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = paths(dir.path(), "12,11\n", META, "10,1,2,3,4\n11,1,2,3,4\n");
        assert!(matches!(ingest_corpus(&p), Err(Error::Schema(_))));
    }
}
