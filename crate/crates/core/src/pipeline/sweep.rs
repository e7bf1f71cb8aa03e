//! Grid evaluation over codec cells, test error rates and channel seeds.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::link::{ChannelConfig, ChannelModel};
use crate::metrics::{psnr_from_mse, MetricsRecord};
use crate::nn::ModelParams;
use crate::pipeline::dataset::Sample;
use crate::pipeline::train::InterleaverKind;
use crate::pipeline::transmit::{transmit_image, EvalTag};
use crate::seeds;

pub const CSV_HEADER: [&str; 19] = [
    "image_id",
    "dataset",
    "bpp_r",
    "bpp_c",
    "bpp_s",
    "bpp_total",
    "pe_train",
    "pe_test",
    "seed",
    "psnr_db",
    "ssim",
    "ms_ssim",
    "ms_ssim_db",
    "psnr_base_db",
    "ones_density_pre",
    "ones_density_post",
    "density_correlation",
    "blocks_hit",
    "ones_flipped",
];

/// One trained codec configuration: a latent size and the error rate it was trained at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub latent_channels: usize,
    pub pe_train: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub cells: Vec<Cell>,
    pub pe_test: Vec<f64>,
    /// Channel seeds.
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.pe_test.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep grid axes must be non-empty".into()));
        }
        if let Some(p) = self.pe_test.iter().find(|p| !(0.0..=100.0).contains(*p)) {
            return Err(Error::Config(format!("pe_test {} outside [0,100]", p)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSetup {
    pub dataset: String,
    pub channel_model: ChannelModel,
    pub block_bytes: usize,
    pub interleaver: InterleaverKind,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

/// Base model plus every available codec.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub base: Option<ModelParams>,
    pub codecs: Vec<ModelParams>,
}

impl ModelSet {
    pub fn find(&self, cell: &Cell) -> Option<&ModelParams> {
        self.codecs.iter().find(|m| {
            m.codec().is_ok_and(|a| a.latent_channels == cell.latent_channels) && m.meta.pe_train == cell.pe_train
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub image_id: String,
    pub cell: Cell,
    pub pe_test: f64,
    pub seed: u64,
    /// None when no model covers the cell.
    pub record: Option<MetricsRecord>,
}

/// Per-cell aggregates across images and seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub present: bool,
    pub bpp_total: f64,
    pub psnr_base_db: f64,
    /// Mean-of-PSNRs at each pe_test, in grid order.
    pub psnr_db: Vec<f64>,
    /// PSNR of the mean MSE at each pe_test.
    pub psnr_of_mean_mse_db: Vec<f64>,
    pub delta_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub dataset: String,
    pub grid: SweepGrid,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<CellSummary>,
}

/// PSNR lost between the clean and the worst channel.
pub fn robustness_gap(psnr_clean: f64, psnr_worst: f64) -> f64 {
    psnr_clean - psnr_worst
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn clean_and_worst(pe_test: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, p) in pe_test.iter().enumerate() {
        if *p < pe_test[lo] {
            lo = i;
        }
        if *p > pe_test[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

pub fn sweep(test: &[Sample], grid: &SweepGrid, models: &ModelSet, setup: &SweepSetup) -> Result<SweepReport> {
    grid.validate()?;
    if test.is_empty() {
        return Err(Error::Dataset("sweep: empty test set".into()));
    }
    let mut tasks = Vec::new();
    for cell in &grid.cells {
        let model = models.find(cell);
        if model.is_none() {
            log::warn!("sweep: no model for latent_channels={} pe_train={}", cell.latent_channels, cell.pe_train);
        }
        for &pe in &grid.pe_test {
            for &seed in &grid.seeds {
                match model {
                    Some(m) => tasks.extend((0..test.len()).map(|i| (*cell, pe, seed, Some((m, i))))),
                    None => tasks.push((*cell, pe, seed, None)),
                }
            }
        }
    }
    let run = |&(cell, pe, seed, item): &(Cell, f64, u64, Option<(&ModelParams, usize)>)| -> Result<SweepRow> {
        let Some((enh, i)) = item else {
            return Ok(SweepRow { image_id: "absent".into(), cell, pe_test: pe, seed, record: None });
        };
        let sample = &test[i];
        let channel = ChannelConfig::new(
            setup.channel_model,
            pe,
            setup.block_bytes,
            seeds::derive_indexed(seed, "channel", &[i as u64]),
        )?;
        let scheme = setup.interleaver.scheme(setup.block_bytes, enh.meta.seed);
        let tag = EvalTag { image_id: sample.id.clone(), seed };
        let t = transmit_image(&sample.image, sample.label.as_ref(), models.base.as_ref(), enh, Some(&channel), scheme, &tag)?;
        Ok(SweepRow { image_id: sample.id.clone(), cell, pe_test: pe, seed, record: Some(t.metrics) })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
    let rows: Vec<SweepRow> = pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    let summary = summarize(&rows, grid);
    Ok(SweepReport { dataset: setup.dataset.clone(), grid: grid.clone(), rows, summary })
}

fn summarize(rows: &[SweepRow], grid: &SweepGrid) -> Vec<CellSummary> {
    let (lo, hi) = clean_and_worst(&grid.pe_test);
    grid.cells
        .iter()
        .map(|cell| {
            let recs = |pe: Option<f64>| -> Vec<&MetricsRecord> {
                rows.iter()
                    .filter(|r| r.cell == *cell && pe.is_none_or(|p| r.pe_test == p))
                    .filter_map(|r| r.record.as_ref())
                    .collect()
            };
            let all = recs(None);
            if all.is_empty() {
                let nan = vec![f64::NAN; grid.pe_test.len()];
                return CellSummary {
                    cell: *cell,
                    present: false,
                    bpp_total: f64::NAN,
                    psnr_base_db: f64::NAN,
                    psnr_db: nan.clone(),
                    psnr_of_mean_mse_db: nan,
                    delta_db: f64::NAN,
                };
            }
            let psnr_db: Vec<f64> = grid
                .pe_test
                .iter()
                .map(|&p| mean(&recs(Some(p)).iter().map(|r| r.psnr_db).collect::<Vec<_>>()))
                .collect();
            let psnr_of_mean_mse_db = grid
                .pe_test
                .iter()
                .map(|&p| psnr_from_mse(mean(&recs(Some(p)).iter().map(|r| r.mse).collect::<Vec<_>>())))
                .collect();
            CellSummary {
                cell: *cell,
                present: true,
                bpp_total: mean(&all.iter().map(|r| r.bpp.bpp_total).collect::<Vec<_>>()),
                psnr_base_db: mean(&all.iter().map(|r| r.psnr_base_db).collect::<Vec<_>>()),
                delta_db: robustness_gap(psnr_db[lo], psnr_db[hi]),
                psnr_db,
                psnr_of_mean_mse_db,
            }
        })
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{:.6}", v)
}

fn record_fields(r: &MetricsRecord) -> Vec<String> {
    vec![
        fmt(r.psnr_db),
        fmt(r.ssim),
        fmt(r.ms_ssim),
        fmt(r.ms_ssim_db),
        fmt(r.psnr_base_db),
        fmt(r.latent_stats.ones_density_pre),
        fmt(r.latent_stats.ones_density_post),
        fmt(r.latent_stats.local_density_correlation),
        r.blocks_hit.to_string(),
        r.ones_flipped.to_string(),
    ]
}

/// One per-image CSV line (no newline) in `CSV_HEADER` order.
pub fn record_row(dataset: &str, r: &MetricsRecord) -> String {
    let b = r.bpp;
    let mut f = vec![r.image_id.clone(), dataset.to_string()];
    f.extend([b.bpp_r, b.bpp_c, b.bpp_s, b.bpp_total].iter().map(|v| fmt(*v)));
    f.extend([fmt(r.pe_train), fmt(r.pe_test), r.seed.to_string()]);
    f.extend(record_fields(r));
    f.join(",")
}

impl SweepReport {
    /// Per-image rows, each (cell, pe_test, seed) group closed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        let mut line = |fields: Vec<String>| {
            out.push_str(&fields.join(","));
            out.push('\n');
        };
        let mut i = 0;
        while i < self.rows.len() {
            let head = &self.rows[i];
            let group: Vec<&SweepRow> = self.rows[i..]
                .iter()
                .take_while(|r| r.cell == head.cell && r.pe_test == head.pe_test && r.seed == head.seed)
                .collect();
            i += group.len();
            let keys = |id: &str| {
                let mut f = vec![id.to_string(), self.dataset.clone()];
                f.extend(std::iter::repeat_n("NA".to_string(), 4));
                f.extend([fmt(head.cell.pe_train), fmt(head.pe_test), head.seed.to_string()]);
                f
            };
            let recs: Vec<&MetricsRecord> = group.iter().filter_map(|r| r.record.as_ref()).collect();
            if recs.is_empty() {
                let mut f = keys("absent");
                f.extend(std::iter::repeat_n("NA".to_string(), CSV_HEADER.len() - f.len()));
                line(f);
                continue;
            }
            for r in &recs {
                line(vec![record_row(&self.dataset, r)]);
            }
            let m = |g: &dyn Fn(&MetricsRecord) -> f64| fmt(mean(&recs.iter().map(|r| g(r)).collect::<Vec<_>>()));
            let mut f = vec!["mean".to_string(), self.dataset.clone()];
            f.extend([m(&|r| r.bpp.bpp_r), m(&|r| r.bpp.bpp_c), m(&|r| r.bpp.bpp_s), m(&|r| r.bpp.bpp_total)]);
            f.extend([fmt(head.cell.pe_train), fmt(head.pe_test), head.seed.to_string()]);
            f.extend([
                m(&|r| r.psnr_db),
                m(&|r| r.ssim),
                m(&|r| r.ms_ssim),
                m(&|r| r.ms_ssim_db),
                m(&|r| r.psnr_base_db),
                m(&|r| r.latent_stats.ones_density_pre),
                m(&|r| r.latent_stats.ones_density_post),
                m(&|r| r.latent_stats.local_density_correlation),
                m(&|r| r.blocks_hit as f64),
                m(&|r| r.ones_flipped as f64),
            ]);
            line(f);
        }
        out
    }

    /// One line per cell: PSNR per pe_test, Δ, base PSNR and PSNR of the mean MSE.
    pub fn summary_csv(&self) -> String {
        let mut header = vec!["latent_channels".to_string(), "pe_train".into(), "bpp_total".into(), "psnr_base_db".into()];
        header.extend(self.grid.pe_test.iter().map(|p| format!("psnr_pe{}", p)));
        header.push("delta_db".into());
        header.extend(self.grid.pe_test.iter().map(|p| format!("psnr_of_mean_mse_pe{}", p)));
        let mut out = header.join(",");
        out.push('\n');
        for s in &self.summary {
            let mut f = vec![s.cell.latent_channels.to_string(), fmt(s.cell.pe_train), fmt(s.bpp_total), fmt(s.psnr_base_db)];
            f.extend(s.psnr_db.iter().map(|v| fmt(*v)));
            f.push(format!("{:.2}", s.delta_db));
            f.extend(s.psnr_of_mean_mse_db.iter().map(|v| fmt(*v)));
            out.push_str(&f.join(","));
            out.push('\n');
        }
        out
    }
}
