//! Run evaluation: FID against the test split and Attribute-L2 through the
//! attribute predictor, rendered as a key=value report plus a table.

use std::fmt::Write as _;

use attr2face_core::attributes::FACE_ATTRS;
use attr2face_core::data::{CuratedSample, Image};
use attr2face_core::metrics::{attribute_l2, fid_detailed, mean_std, FidDetail};
use attr2face_core::predictor::{extract_features, extractor_by_name, AttributePredictor};
use attr2face_core::Tensor;

use crate::error::{Error, Result};
use crate::synth::Synthesizer;

/// Published figures, shown for context only: they come from full-scale
/// training with an external attribute predictor and Inception features.
pub struct Reference {
    pub key: &'static str,
    pub label: &'static str,
    pub value: &'static str,
}

pub const REFERENCES: [Reference; 6] = [
    Reference { key: "celeba.fid", label: "CelebA FID", value: "33.497" },
    Reference { key: "celeba.attribute_l2", label: "CelebA Attribute-L2", value: "0.051 ± 0.019" },
    Reference { key: "lfw.fid", label: "LFW FID", value: "43.712" },
    Reference { key: "lfw.attribute_l2", label: "LFW Attribute-L2", value: "0.048 ± 0.020" },
    Reference { key: "celebahq.fid", label: "CelebA-HQ FID (multi-scale)", value: "30.566" },
    Reference { key: "celebahq.fid_single_scale", label: "CelebA-HQ FID (single scale)", value: "37.381" },
];

pub const NON_COMPARABLE: &str = "NON-COMPARABLE";

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub extractor: String,
    /// Use copies of the reference faces instead of generated ones.
    pub oracle: bool,
    pub chunk: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { n_samples: 64, seed: 0, extractor: "predictor".into(), oracle: false, chunk: 32 }
    }
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub fid: FidDetail,
    pub attribute_l2_mean: f64,
    pub attribute_l2_std: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub extractor_id: String,
    pub predictor_hash: String,
    pub model_hash: String,
    pub seed: u64,
    pub oracle: bool,
}

impl MetricsReport {
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = vec![
            ("fid".into(), format!("{}", self.fid.fid)),
            ("fid.mean_term".into(), format!("{}", self.fid.mean_term)),
            ("fid.trace_term".into(), format!("{}", self.fid.trace_term)),
            ("fid.min_eigenvalue".into(), format!("{}", self.fid.min_eigenvalue)),
            ("fid.clipped_beyond_tolerance".into(), self.fid.clipped_beyond_tolerance.to_string()),
            ("attribute_l2.mean".into(), format!("{}", self.attribute_l2_mean)),
            ("attribute_l2.std".into(), format!("{}", self.attribute_l2_std)),
            ("n_generated".into(), self.n_generated.to_string()),
            ("n_reference".into(), self.n_reference.to_string()),
            ("extractor".into(), self.extractor_id.clone()),
            ("predictor_hash".into(), self.predictor_hash.clone()),
            ("model_hash".into(), self.model_hash.clone()),
            ("seed".into(), self.seed.to_string()),
            ("oracle".into(), self.oracle.to_string()),
        ];
        for r in &REFERENCES {
            e.push((format!("reference.{}", r.key), format!("{} ({NON_COMPARABLE})", r.value)));
        }
        e
    }

    /// `key=value` lines followed by a readable table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "| metric | this run | published ({NON_COMPARABLE} at desk scale) |");
        let _ = writeln!(s, "|---|---|---|");
        let _ = writeln!(s, "| FID ({}) | {:.4} | CelebA 33.497 / LFW 43.712 |", self.extractor_id, self.fid.fid);
        let _ = writeln!(
            s,
            "| Attribute-L2 | {:.4} ± {:.4} (n={}) | CelebA 0.051 ± 0.019 / LFW 0.048 ± 0.020 |",
            self.attribute_l2_mean, self.attribute_l2_std, self.n_generated
        );
        let _ = writeln!(s, "| CelebA-HQ FID | - | multi-scale 30.566 / single-scale 37.381 |");
        s
    }
}

fn top_faces(samples: &[CuratedSample]) -> Result<Tensor> {
    Ok(Tensor::stack(&samples.iter().map(|s| s.face.top().to_chw()).collect::<Vec<_>>())?)
}

/// Generates `n_samples` faces from the attributes of `test` (cycling) with
/// seeded noise and scores them against `test`.
pub fn evaluate_run(
    synth: Option<&Synthesizer>,
    test: &[CuratedSample],
    predictor: &AttributePredictor,
    predictor_hash: &str,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if opts.n_samples < 2 {
        return Err(Error::Config(format!("evaluation needs at least 2 samples, got {}", opts.n_samples)));
    }
    if test.len() < 2 {
        return Err(Error::Config(format!("evaluation needs at least 2 reference samples, got {}", test.len())));
    }
    let refs: Vec<&CuratedSample> = (0..opts.n_samples).map(|i| &test[i % test.len()]).collect();
    let generated: Tensor = if opts.oracle {
        Tensor::stack(&refs.iter().map(|s| s.face.top().to_chw()).collect::<Vec<_>>())?
    } else {
        let synth = synth.ok_or_else(|| Error::Config("no model loaded for evaluation".into()))?;
        let items: Vec<(Vec<f64>, u64)> = refs.iter().enumerate().map(|(i, s)| (s.y_f.clone(), i as u64)).collect();
        let out = synth.render(&items, opts.seed)?;
        Tensor::stack(&out.faces.iter().map(|f: &Image| f.to_signed().to_chw()).collect::<Vec<_>>())?
    };
    let reference = top_faces(test)?;
    let extractor = extractor_by_name(&opts.extractor, Some(predictor))?;
    let fa = extract_features(&reference, extractor.as_ref(), opts.chunk)?;
    let fb = extract_features(&generated, extractor.as_ref(), opts.chunk)?;
    let fid = fid_detailed(&fa, &fb)?;
    let ref_images = Tensor::stack(&refs.iter().map(|s| s.face.top().to_chw()).collect::<Vec<_>>())?;
    let (_, ref_scores) = predictor.predict(&ref_images)?;
    let (_, gen_scores) = predictor.predict(&generated)?;
    let l2: Vec<f64> = (0..opts.n_samples)
        .map(|i| {
            let a = &ref_scores.data()[i * FACE_ATTRS..(i + 1) * FACE_ATTRS];
            let b = &gen_scores.data()[i * FACE_ATTRS..(i + 1) * FACE_ATTRS];
            attribute_l2(a, b)
        })
        .collect::<attr2face_core::Result<_>>()?;
    let (mean, std) = mean_std(&l2)?;
    Ok(MetricsReport {
        fid,
        attribute_l2_mean: mean,
        attribute_l2_std: std,
        n_generated: opts.n_samples,
        n_reference: test.len(),
        extractor_id: fa.extractor_id.clone(),
        predictor_hash: predictor_hash.to_string(),
        model_hash: synth.map(|s| s.model_hash.clone()).unwrap_or_else(|| "oracle".into()),
        seed: opts.seed,
        oracle: opts.oracle,
    })
}

/// Images `[N,3,R,R]` and ±1 labels `[N,23]` of curated samples.
pub fn predictor_data(samples: &[CuratedSample]) -> Result<(Tensor, Tensor)> {
    let images = top_faces(samples)?;
    let labels = Tensor::new(&[samples.len(), FACE_ATTRS], samples.iter().flat_map(|s| s.y_f.iter().copied()).collect())?;
    Ok((images, labels))
}
