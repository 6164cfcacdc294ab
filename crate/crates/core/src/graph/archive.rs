//! Binary corpus archive: `EMKC` magic, u64 LE header length, JSON header
//! (ids, years, edges, widths), then metadata and embedding rows as
//! little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{CitationCorpus, NodeId, PaperNode};

const MAGIC: &[u8; 4] = b"EMKC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    f_meta: usize,
    f_embed: usize,
    original_ids: Vec<u64>,
    years: Vec<Option<i32>>,
    edges: Vec<(usize, usize)>,
}

pub fn encode_corpus(corpus: &CitationCorpus) -> Result<Vec<u8>> {
    let header = Header {
        version: VERSION,
        f_meta: corpus.f_meta(),
        f_embed: corpus.f_embed(),
        original_ids: corpus.nodes().iter().map(|n| n.original_id).collect(),
        years: corpus.nodes().iter().map(|n| n.year).collect(),
        edges: corpus.edges().iter().map(|&(a, b)| (a.0, b.0)).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for n in corpus.nodes() {
        for v in &n.meta {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for n in corpus.nodes() {
        for v in &n.embedding {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_corpus(bytes: &[u8]) -> Result<CitationCorpus> {
    let bad = |m: &str| Error::Schema(format!("corpus archive: {m}"));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing EMKC magic"));
    }
    let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let h: Header = serde_json::from_slice(json)?;
    if h.version != VERSION {
        return Err(bad(&format!("unsupported version {}", h.version)));
    }
    let n = h.original_ids.len();
    if h.years.len() != n {
        return Err(bad("years length mismatch"));
    }
    let payload = &bytes[12 + hlen..];
    if payload.len() != n * (h.f_meta + h.f_embed) * 8 {
        return Err(bad("payload size mismatch"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let metas: Vec<Vec<f64>> = (0..n)
        .map(|_| values.by_ref().take(h.f_meta).collect())
        .collect();
    let nodes = metas
        .into_iter()
        .enumerate()
        .map(|(i, meta)| PaperNode {
            id: NodeId(i),
            original_id: h.original_ids[i],
            year: h.years[i],
            meta,
            embedding: values.by_ref().take(h.f_embed).collect(),
        })
        .collect();
    let edges = h.edges.into_iter().map(|(a, b)| (NodeId(a), NodeId(b)));
    Ok(CitationCorpus::new(nodes, edges, h.f_meta, h.f_embed)?.0)
}

pub fn write_corpus(path: &Path, corpus: &CitationCorpus) -> Result<()> {
    fs::write(path, encode_corpus(corpus)?).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<CitationCorpus> {
    decode_corpus(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
