//! Browser bindings. Every export takes and returns JSON text so the page
//! needs no generated type glue.

use nuclear_readout::analysis::{
    exact_heralded_pmf, major_minor, optimize_threshold, predict_single_read, ClassifierConfig,
    PeakPair, PredictedStats, ThresholdChoice,
};
use nuclear_readout::model::{odmr_spectrum, LevelDiagram};
use nuclear_readout::optics::{expected_cycle_photons, propagate, OpticalModel, Populations};
use nuclear_readout::{Electron, Nuclear, PhysicalParams, RegisterState, ShotModel};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutRequest {
    #[serde(default)]
    pub model: Option<ShotModel>,
    pub cycles: u32,
    #[serde(default)]
    pub classifier: ClassifierConfig,
}

#[derive(Debug, Serialize)]
pub struct ReadoutResponse {
    pub pmf_up: Vec<f64>,
    pub pmf_dn: Vec<f64>,
    pub stats: PredictedStats,
    pub best_raw: ThresholdChoice,
    pub best_conditional: ThresholdChoice,
}

/// Exact total-count distributions, fidelities at the configured cutoff, and
/// the best cutoff for raw and post-selected readout.
pub fn readout(req: &ReadoutRequest) -> Result<ReadoutResponse, String> {
    let model = req.model.unwrap_or_default();
    let k = req.classifier.herald_cycles.min(req.cycles);
    let config = ClassifierConfig {
        herald_cycles: k,
        ..req.classifier
    };
    let up = exact_heralded_pmf(&model, req.cycles, Nuclear::Up, k).map_err(fail)?;
    let dn = exact_heralded_pmf(&model, req.cycles, Nuclear::Down, k).map_err(fail)?;
    let (pmf_up, pmf_dn) = (up.combined(), dn.combined());
    Ok(ReadoutResponse {
        stats: predict_single_read(&model, req.cycles, &config).map_err(fail)?,
        best_raw: optimize_threshold(&pmf_up, &pmf_dn).map_err(fail)?,
        best_conditional: optimize_threshold(&up.nonzero, &dn.zero).map_err(fail)?,
        pmf_up,
        pmf_dn,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpRequest {
    #[serde(default)]
    pub optics: Option<OpticalModel>,
    pub duration_us: f64,
    pub samples: usize,
}

#[derive(Debug, Serialize)]
pub struct PumpResponse {
    pub time_us: Vec<f64>,
    pub g12: Vec<f64>,
    pub g32: Vec<f64>,
    pub excited: Vec<f64>,
    pub metastable: Vec<f64>,
    pub photons_per_window: f64,
    pub pumped_at_1p5_us: Option<f64>,
}

const PUMP_STEP_US: f64 = 1e-3;

pub fn pump(req: &PumpRequest) -> Result<PumpResponse, String> {
    let model = req.optics.unwrap_or_default();
    if !(req.duration_us > 0.0 && req.duration_us <= 100.0) {
        return Err("duration_us must lie in (0, 100]".into());
    }
    let curve = propagate(
        &model.with_start(Populations::in_g32()),
        req.duration_us,
        PUMP_STEP_US.min(req.duration_us),
    )
    .map_err(fail)?;
    let stride = (curve.time_us.len() / req.samples.max(2)).max(1);
    let mut out = PumpResponse {
        time_us: Vec::new(),
        g12: Vec::new(),
        g32: Vec::new(),
        excited: Vec::new(),
        metastable: Vec::new(),
        photons_per_window: expected_cycle_photons(
            &model,
            1.5,
            &RegisterState::new(Electron::PlusThreeHalves, Nuclear::Up),
        )
        .map_err(fail)?,
        pumped_at_1p5_us: (req.duration_us >= 1.5)
            .then(|| curve.target_at(1.5))
            .flatten(),
    };
    for (t, p) in curve.time_us.iter().zip(&curve.populations).step_by(stride) {
        out.time_us.push(*t);
        out.g12.push(p.g12);
        out.g32.push(p.g32);
        out.excited.push(p.e12 + p.e32);
        out.metastable.push(p.m);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdmrRequest {
    pub p_up: f64,
    #[serde(default)]
    pub physical: Option<PhysicalParams>,
    pub span: f64,
    pub step: f64,
}

#[derive(Debug, Serialize)]
pub struct OdmrResponse {
    pub frequency_mhz: Vec<f64>,
    pub contrast: Vec<f64>,
    pub peaks: PeakPair,
}

pub fn odmr(req: &OdmrRequest) -> Result<OdmrResponse, String> {
    let params = req.physical.clone().unwrap_or_default();
    if !(req.step > 0.0 && req.span > 0.0 && req.span / req.step <= 1e5) {
        return Err("span and step must be > 0 with at most 1e5 points per side".into());
    }
    let n = (2.0 * req.span / req.step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| -req.span + i as f64 * req.step).collect();
    let contrast = odmr_spectrum(
        &params,
        &LevelDiagram::standard(),
        (req.p_up, 1.0 - req.p_up),
        &grid,
    )
    .map_err(fail)?;
    let peaks = major_minor(&grid, &contrast).map_err(fail)?;
    Ok(OdmrResponse {
        frequency_mhz: grid,
        contrast,
        peaks,
    })
}

fn call<Req: for<'de> Deserialize<'de>, Resp: Serialize>(
    json: &str,
    f: impl FnOnce(&Req) -> Result<Resp, String>,
) -> Result<String, JsValue> {
    let req: Req = serde_json::from_str(json).map_err(|e| JsValue::from_str(&e.to_string()))?;
    let resp = f(&req).map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&resp).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = readoutStatistics)]
pub fn readout_statistics(request: &str) -> Result<String, JsValue> {
    call(request, readout)
}

#[wasm_bindgen(js_name = pumpCurve)]
pub fn pump_curve(request: &str) -> Result<String, JsValue> {
    call(request, pump)
}

#[wasm_bindgen(js_name = odmrSpectrum)]
pub fn odmr_spectrum_json(request: &str) -> Result<String, JsValue> {
    call(request, odmr)
}

/// The default model, for filling the form.
#[wasm_bindgen(js_name = defaultModel)]
pub fn default_model() -> String {
    serde_json::to_string(&ShotModel::default()).expect("serializable")
}
