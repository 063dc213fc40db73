//! Seeded synthetic markets for integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use decarb_core::data::{
    self, AssetRecord, CarbonProxy, CarbonValues, FactorPanel, MissingDataPolicy, ModelKind, Universe,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Market {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    /// dates × assets
    pub closes: Array2<f64>,
    pub caps: Vec<f64>,
    pub ghg: Vec<f64>,
    pub co2: Vec<f64>,
    pub factors: Array2<f64>,
    pub rf: Array1<f64>,
}

pub fn weekdays(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

/// Weekdays from `start` up to but excluding `start + years`.
pub fn weekdays_for_years(start: NaiveDate, years: u32) -> Vec<NaiveDate> {
    let end = start.checked_add_months(chrono::Months::new(12 * years)).unwrap();
    let mut out = Vec::new();
    let mut d = start;
    while d < end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Five-factor market of `n` assets over `dates`.
///
/// Specific volatility rises with asset index scatter and carbon rises
/// steeply with total volatility, so high emitters are the risky names.
pub fn synthetic_market(seed: u64, n: usize, dates: Vec<NaiveDate>) -> Market {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 5;
    let t = dates.len();
    let factor_vol = [0.010, 0.005, 0.005, 0.004, 0.004];
    let factors = Array2::from_shape_fn((t, k), |(_, j)| factor_vol[j] * normal(&mut rng));
    let rf = Array1::from_elem(t, 0.0001);

    let mut closes = Array2::zeros((t, n));
    let mut ghg = Vec::with_capacity(n);
    let mut co2 = Vec::with_capacity(n);
    let mut caps = Vec::with_capacity(n);
    for i in 0..n {
        let market_beta = rng.random_range(0.6..1.4);
        let beta = [
            market_beta,
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ];
        let spec_vol = rng.random_range(0.008..0.03);
        let alpha = rng.random_range(-0.0002..0.0004);
        let total_vol = (spec_vol * spec_vol + (market_beta * 0.01f64).powi(2)).sqrt();
        let intensity = 40.0 * (total_vol / 0.02).powi(4) * (0.2 * normal(&mut rng)).exp();
        ghg.push(intensity);
        let cap = 1e9 * (1.0 * normal(&mut rng)).exp();
        caps.push(cap);
        co2.push(intensity * (cap / 1e9).sqrt() * 1e3);

        let mut p = rng.random_range(20.0..200.0);
        for s in 0..t {
            if s > 0 {
                let mut r = alpha + rf[s] + spec_vol * normal(&mut rng);
                for j in 0..k {
                    r += beta[j] * factors[[s, j]];
                }
                p *= 1.0 + r;
            }
            closes[[s, i]] = p;
        }
    }
    Market {
        dates,
        tickers: (0..n).map(|i| format!("A{i:04}")).collect(),
        closes,
        caps,
        ghg,
        co2,
        factors,
        rf,
    }
}

impl Market {
    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn records(&self) -> Vec<AssetRecord> {
        (0..self.n_assets())
            .map(|i| {
                let closes: BTreeMap<NaiveDate, f64> = self
                    .dates
                    .iter()
                    .enumerate()
                    .map(|(s, &d)| (d, self.closes[[s, i]]))
                    .collect();
                AssetRecord::new(
                    self.tickers[i].clone(),
                    closes,
                    self.caps[i],
                    CarbonValues {
                        ghg: Some(self.ghg[i]),
                        co2: Some(self.co2[i]),
                    },
                )
                .unwrap()
            })
            .collect()
    }

    pub fn panel(&self) -> FactorPanel {
        FactorPanel::new(ModelKind::FiveFactor, self.dates.clone(), self.factors.clone(), self.rf.clone()).unwrap()
    }

    pub fn universe(&self, proxy: CarbonProxy) -> Universe {
        data::assemble_universe(self.records(), &self.panel(), proxy, &MissingDataPolicy::default()).unwrap()
    }

    /// Write prices.csv, caps.csv, carbon.csv and factors.csv into `dir`.
    pub fn write_files(&self, dir: &Path) {
        fs::create_dir_all(dir).unwrap();
        let mut prices = String::from("date,ticker,close\n");
        for (s, d) in self.dates.iter().enumerate() {
            for (i, t) in self.tickers.iter().enumerate() {
                writeln!(prices, "{d},{t},{}", self.closes[[s, i]]).unwrap();
            }
        }
        fs::write(dir.join("prices.csv"), prices).unwrap();

        let mut caps = String::from("ticker,market_cap\n");
        let mut carbon = String::from("ticker,ghg,co2\n");
        for (i, t) in self.tickers.iter().enumerate() {
            writeln!(caps, "{t},{}", self.caps[i]).unwrap();
            writeln!(carbon, "{t},{},{}", self.ghg[i], self.co2[i]).unwrap();
        }
        fs::write(dir.join("caps.csv"), caps).unwrap();
        fs::write(dir.join("carbon.csv"), carbon).unwrap();

        let mut factors = String::from("date,MKT_RF,SMB,HML,RMW,CMA,RF\n");
        for (s, d) in self.dates.iter().enumerate() {
            let row: Vec<String> = self.factors.row(s).iter().map(|v| v.to_string()).collect();
            writeln!(factors, "{d},{},{}", row.join(","), self.rf[s]).unwrap();
        }
        fs::write(dir.join("factors.csv"), factors).unwrap();
    }
}

/// Config text pointing at the files written by [`Market::write_files`].
pub fn base_config() -> String {
    "prices = prices.csv\ncaps = caps.csv\ncarbon = carbon.csv\nfactors = factors.csv\nmodel = five\n".to_string()
}

pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("study.conf");
    fs::write(&path, format!("{}{extra}", base_config())).unwrap();
    path
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}
