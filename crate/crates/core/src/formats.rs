//! On-disk formats: model, embedder and context checkpoints (JSON), the
//! image feature file, the split manifest and the projection CSV.
//!
//! Every JSON file carries a `"format"` tag that is checked on load.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextStats, Gaussian};
use crate::graph::{DatasetSplits, EntityId, RelationId, Vocab};
use crate::image::{Activation, ImageEmbedder, Layer, LabeledFeature};
use crate::kg::{EntityEmbedding, KgModel, ModelConfig, RelationParams, TensorParams, Variant};
use crate::pca::Projection;

pub const MODEL_FORMAT: &str = "kgrec-model-v1";
pub const EMBEDDER_FORMAT: &str = "kgrec-embedder-v1";
pub const CONTEXT_FORMAT: &str = "kgrec-context-v1";
pub const SPLITS_FORMAT: &str = "kgrec-splits-v1";
pub const FEATURES_FORMAT: &str = "kgrec-features-v1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: schema version mismatch: expected `{expected}`, found `{found}`")]
    Schema {
        path: String,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: line {line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

fn io_error(path: &Path) -> impl Fn(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn invalid(path: &Path, reason: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_error(path))
}

/// Reads a JSON file after checking its `"format"` tag.
fn read_tagged<T: DeserializeOwned>(path: &Path, expected: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let json_err = |source| FormatError::Json {
        path: path.display().to_string(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    let found = value
        .get("format")
        .and_then(|f| f.as_str())
        .unwrap_or("<missing>");
    if found != expected {
        return Err(FormatError::Schema {
            path: path.display().to_string(),
            expected,
            found: found.to_owned(),
        });
    }
    serde_json::from_value(value).map_err(json_err)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RelationParamsFile {
    Tensor {
        /// `k` slices of `d × d`.
        #[serde(rename = "W")]
        w: Vec<Vec<Vec<f64>>>,
        #[serde(rename = "V")]
        v: Vec<Vec<f64>>,
        b: Vec<f64>,
        u: Vec<f64>,
    },
    Translation {
        t: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    variant: Variant,
    d: usize,
    k: usize,
    entities: Vec<String>,
    relations: Vec<String>,
    entity_vecs: Vec<Vec<f64>>,
    relation_params: BTreeMap<String, RelationParamsFile>,
    config: ModelConfig,
}

pub fn save_model(model: &KgModel, path: &Path) -> Result<()> {
    let d = model.dim();
    let relation_params = model
        .relations
        .labels()
        .iter()
        .zip(&model.relation_params)
        .map(|(label, p)| {
            let file = match p {
                RelationParams::Tensor(tp) => RelationParamsFile::Tensor {
                    w: (0..tp.slices)
                        .map(|s| tp.w_slice(s).chunks(d).map(<[f64]>::to_vec).collect())
                        .collect(),
                    v: tp.v.chunks(2 * d).map(<[f64]>::to_vec).collect(),
                    b: tp.b.clone(),
                    u: tp.u.clone(),
                },
                RelationParams::Translation(t) => RelationParamsFile::Translation { t: t.clone() },
            };
            (label.clone(), file)
        })
        .collect();
    let file = ModelFile {
        format: MODEL_FORMAT.to_owned(),
        variant: model.variant,
        d,
        k: model.config.slices,
        entities: model.entities.labels().to_vec(),
        relations: model.relations.labels().to_vec(),
        entity_vecs: model.embedding.iter_rows().map(<[f64]>::to_vec).collect(),
        relation_params,
        config: model.config.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|source| FormatError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_error(path))
}

pub fn load_model(path: &Path) -> Result<KgModel> {
    let file: ModelFile = read_tagged(path, MODEL_FORMAT)?;
    let (d, k) = (file.d, file.k);
    if file.config.dim != d || file.config.slices != k {
        return Err(invalid(path, "d/k disagree with the embedded config"));
    }
    let entities = Vocab::from_labels(file.entities).map_err(|e| invalid(path, e.to_string()))?;
    let relations = Vocab::from_labels(file.relations).map_err(|e| invalid(path, e.to_string()))?;
    if file.entity_vecs.len() != entities.len() {
        return Err(invalid(path, "entity_vecs rows do not match entities"));
    }
    let embedding =
        EntityEmbedding::from_rows(&file.entity_vecs, d).map_err(|e| invalid(path, e.to_string()))?;

    let mut params_by_label = file.relation_params;
    let mut relation_params = Vec::with_capacity(relations.len());
    for label in relations.labels() {
        let p = params_by_label
            .remove(label)
            .ok_or_else(|| invalid(path, format!("no parameters for relation `{label}`")))?;
        let shape_err = || invalid(path, format!("relation `{label}` has the wrong shape"));
        let p = match (file.variant, p) {
            (Variant::TransE, RelationParamsFile::Translation { t }) => {
                if t.len() != d {
                    return Err(shape_err());
                }
                RelationParams::Translation(t)
            }
            (Variant::Ntl | Variant::Sntl, RelationParamsFile::Tensor { w, v, b, u }) => {
                let w_ok = w.len() == k && w.iter().all(|s| s.len() == d && s.iter().all(|r| r.len() == d));
                let v_ok = v.len() == k && v.iter().all(|r| r.len() == 2 * d);
                if !w_ok || !v_ok || b.len() != k || u.len() != k {
                    return Err(shape_err());
                }
                RelationParams::Tensor(TensorParams {
                    dim: d,
                    slices: k,
                    w: w.into_iter().flatten().flatten().collect(),
                    v: v.into_iter().flatten().collect(),
                    b,
                    u,
                })
            }
            _ => return Err(invalid(path, format!("relation `{label}` does not match the variant"))),
        };
        relation_params.push(p);
    }
    let model = KgModel {
        variant: file.variant,
        config: file.config,
        entities,
        relations,
        embedding,
        relation_params,
    };
    if !model.is_finite() {
        return Err(invalid(path, "non-finite parameters"));
    }
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct EmbedderFile {
    format: String,
    dims: Vec<usize>,
    /// Per layer, `outputs × inputs`.
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    #[serde(default)]
    activation: Activation,
    #[serde(default)]
    dropout: f64,
}

pub fn save_embedder(embedder: &ImageEmbedder, path: &Path) -> Result<()> {
    let file = EmbedderFile {
        format: EMBEDDER_FORMAT.to_owned(),
        dims: embedder.dims(),
        weights: embedder
            .layers
            .iter()
            .map(|l| l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect())
            .collect(),
        biases: embedder.layers.iter().map(|l| l.bias.clone()).collect(),
        activation: embedder.activation,
        dropout: embedder.dropout,
    };
    write_json(path, &file)
}

pub fn load_embedder(path: &Path) -> Result<ImageEmbedder> {
    let file: EmbedderFile = read_tagged(path, EMBEDDER_FORMAT)?;
    if file.dims.len() < 2 || file.weights.len() != file.dims.len() - 1 || file.biases.len() != file.weights.len() {
        return Err(invalid(path, "dims, weights and biases disagree"));
    }
    let layers = file
        .dims
        .windows(2)
        .zip(file.weights)
        .zip(file.biases)
        .map(|((w, weights), bias)| Layer {
            inputs: w[0],
            outputs: w[1],
            weights: weights.into_iter().flatten().collect(),
            bias,
        })
        .collect();
    ImageEmbedder::from_layers(layers, file.activation, file.dropout).map_err(|e| invalid(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct ContextFile {
    format: String,
    mu_true: f64,
    sigma_true: f64,
    mu_false: f64,
    sigma_false: f64,
    attention: Vec<(String, String, u32)>,
    known_entity_count: usize,
    #[serde(default)]
    laplace: f64,
    /// relation label → `[mu_true, sigma_true, mu_false, sigma_false]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_relation: Option<BTreeMap<String, [f64; 4]>>,
}

pub fn save_context(stats: &ContextStats, model: &KgModel, path: &Path) -> Result<()> {
    let mut counts: Vec<(&(RelationId, EntityId), &u32)> = stats.counts.iter().collect();
    counts.sort();
    let file = ContextFile {
        format: CONTEXT_FORMAT.to_owned(),
        mu_true: stats.true_scores.mu,
        sigma_true: stats.true_scores.sigma,
        mu_false: stats.false_scores.mu,
        sigma_false: stats.false_scores.sigma,
        attention: counts
            .into_iter()
            .map(|(&(r, e), &c)| {
                (
                    model.relations.label(r.0).to_owned(),
                    model.entities.label(e.0).to_owned(),
                    c,
                )
            })
            .collect(),
        known_entity_count: stats.known_entity_count,
        laplace: stats.laplace,
        per_relation: stats.per_relation.as_ref().map(|m| {
            m.iter()
                .map(|(r, (t, f))| {
                    (
                        model.relations.label(r.0).to_owned(),
                        [t.mu, t.sigma, f.mu, f.sigma],
                    )
                })
                .collect()
        }),
    };
    write_json(path, &file)
}

/// Loads context statistics, resolving labels against `model`.
pub fn load_context(path: &Path, model: &KgModel) -> Result<ContextStats> {
    let file: ContextFile = read_tagged(path, CONTEXT_FORMAT)?;
    let relation = |label: &str| {
        model
            .relation_id(label)
            .ok_or_else(|| invalid(path, format!("unknown relation `{label}`")))
    };
    let mut counts = HashMap::new();
    for (r, e, c) in &file.attention {
        let entity = model
            .entity_id(e)
            .ok_or_else(|| invalid(path, format!("unknown entity `{e}`")))?;
        if *c as usize > file.known_entity_count {
            return Err(invalid(path, format!("count {c} exceeds known_entity_count")));
        }
        counts.insert((relation(r)?, entity), *c);
    }
    let per_relation = match file.per_relation {
        Some(map) => {
            let mut out = HashMap::new();
            for (label, [mt, st, mf, sf]) in map {
                out.insert(
                    relation(&label)?,
                    (Gaussian { mu: mt, sigma: st }, Gaussian { mu: mf, sigma: sf }),
                );
            }
            Some(out)
        }
        None => None,
    };
    if !(file.sigma_true > 0.0 && file.sigma_false > 0.0) {
        return Err(invalid(path, "standard deviations must be positive"));
    }
    Ok(ContextStats {
        counts,
        known_entity_count: file.known_entity_count,
        true_scores: Gaussian {
            mu: file.mu_true,
            sigma: file.sigma_true,
        },
        false_scores: Gaussian {
            mu: file.mu_false,
            sigma: file.sigma_false,
        },
        per_relation,
        laplace: file.laplace,
    })
}

/// Parsed feature file: declared width and records in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub records: Vec<LabeledFeature>,
}

fn parse_header(line: &str) -> std::result::Result<usize, String> {
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| "missing `#kgrec-features-v1 dim=<F>` header".to_owned())?;
    let mut parts = rest.split_whitespace();
    let tag = parts.next().unwrap_or("");
    if tag != FEATURES_FORMAT {
        return Err(format!("schema version mismatch: expected `{FEATURES_FORMAT}`, found `{tag}`"));
    }
    let dim = parts
        .next()
        .and_then(|p| p.strip_prefix("dim="))
        .ok_or_else(|| "header lacks `dim=<F>`".to_owned())?;
    let dim: usize = dim.parse().map_err(|_| format!("bad dim `{dim}`"))?;
    if dim == 0 {
        return Err("dim must be >= 1".into());
    }
    Ok(dim)
}

pub fn read_features<R: BufRead>(reader: R, path: &Path) -> Result<FeatureFile> {
    let malformed = |line: usize, reason: String| FormatError::Malformed {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l.map_err(io_error(path))?,
        None => return Err(malformed(1, "empty feature file".into())),
    };
    let dim = parse_header(header.trim_end_matches('\r')).map_err(|r| {
        if r.starts_with("schema") {
            FormatError::Schema {
                path: path.display().to_string(),
                expected: FEATURES_FORMAT,
                found: header.split_whitespace().next().unwrap_or("").trim_start_matches('#').to_owned(),
            }
        } else {
            malformed(1, r)
        }
    })?;

    let mut records = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.map_err(io_error(path))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(malformed(line_no, "empty image id or label".into()));
        }
        let feature = fields[2]
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| malformed(line_no, format!("bad value `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if feature.len() != dim {
            return Err(malformed(line_no, format!("expected {dim} values, found {}", feature.len())));
        }
        records.push(LabeledFeature {
            image_id: fields[0].to_owned(),
            label: fields[1].to_owned(),
            feature,
        });
    }
    Ok(FeatureFile { dim, records })
}

pub fn load_features(path: &Path) -> Result<FeatureFile> {
    let file = File::open(path).map_err(io_error(path))?;
    read_features(BufReader::new(file), path)
}

pub fn write_features<W: Write>(dim: usize, records: &[LabeledFeature], mut out: W) -> io::Result<()> {
    writeln!(out, "#{FEATURES_FORMAT} dim={dim}")?;
    for r in records {
        let values: Vec<String> = r.feature.iter().map(f64::to_string).collect();
        writeln!(out, "{}\t{}\t{}", r.image_id, r.label, values.join(","))?;
    }
    Ok(())
}

pub fn save_features(dim: usize, records: &[LabeledFeature], path: &Path) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.feature.len() != dim) {
        return Err(invalid(path, format!("record `{}` has {} values, expected {dim}", r.image_id, r.feature.len())));
    }
    let file = File::create(path).map_err(io_error(path))?;
    let mut out = BufWriter::new(file);
    write_features(dim, records, &mut out).map_err(io_error(path))?;
    out.flush().map_err(io_error(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub holdout: Vec<String>,
    pub seed: u64,
    pub test_fraction: f64,
}

/// Writes `train.tsv`, `standard_test.tsv`, `hard_test.tsv` and
/// `splits.json` into `dir`.
pub fn save_splits(splits: &DatasetSplits, seed: u64, test_fraction: f64, dir: &Path) -> Result<SplitManifest> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    for (name, triples) in [
        ("train.tsv", &splits.train),
        ("standard_test.tsv", &splits.standard_test),
        ("hard_test.tsv", &splits.hard_test),
    ] {
        let path = dir.join(name);
        splits
            .store_of(triples)
            .save(&path)
            .map_err(|e| invalid(&path, e.to_string()))?;
    }
    let manifest = SplitManifest {
        format: SPLITS_FORMAT.to_owned(),
        holdout: splits.holdout_labels(),
        seed,
        test_fraction,
    };
    write_json(&dir.join("splits.json"), &manifest)?;
    Ok(manifest)
}

pub fn load_split_manifest(path: &Path) -> Result<SplitManifest> {
    read_tagged(path, SPLITS_FORMAT)
}

/// `id,pc1,pc2,…` preceded by an explained-variance comment line.
pub fn write_projection<W: Write>(ids: &[String], projection: &Projection, mut out: W) -> io::Result<()> {
    let explained: Vec<String> = projection.explained.iter().map(f64::to_string).collect();
    writeln!(out, "# explained_variance={}", explained.join(","))?;
    let headers: Vec<String> = (1..=projection.explained.len()).map(|i| format!("pc{i}")).collect();
    writeln!(out, "id,{}", headers.join(","))?;
    for (id, row) in ids.iter().zip(&projection.coordinates) {
        let values: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{id},{}", values.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_file_parses_labels_and_unlabeled() {
        let text = "#kgrec-features-v1 dim=3\nimg1\tdog\t0.5,1,-2e-1\nimg2\t?\t0,0,1\n";
        let f = read_features(text.as_bytes(), Path::new("x")).unwrap();
        assert_eq!(f.dim, 3);
        assert_eq!(f.records.len(), 2);
        assert_eq!(f.records[0].feature, vec![0.5, 1.0, -0.2]);
        assert!(!f.records[1].is_labeled());
    }

    #[test]
    fn feature_file_errors() {
        let p = Path::new("f");
        assert!(matches!(
            read_features("#kgrec-features-v2 dim=3\n".as_bytes(), p),
            Err(FormatError::Schema { .. })
        ));
        assert!(matches!(
            read_features("#kgrec-features-v1 dim=2\na\tb\t1,2,3\n".as_bytes(), p),
            Err(FormatError::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            read_features("#kgrec-features-v1 dim=2\na\tb\t1,x\n".as_bytes(), p),
            Err(FormatError::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            read_features("img\tdog\t1,2\n".as_bytes(), p),
            Err(FormatError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn features_round_trip_exactly() {
        let records = vec![LabeledFeature {
            image_id: "i".into(),
            label: "n.0".into(),
            feature: vec![0.1 + 0.2, -1e-300, 12345.678901234567],
        }];
        let mut buf = Vec::new();
        write_features(3, &records, &mut buf).unwrap();
        let back = read_features(buf.as_slice(), Path::new("b")).unwrap();
        assert_eq!(back.records, records);
    }
}
