//! Loading and validation of prices, sentiment and factor files.
//!
//! Prices are held in a dense (ticker x trading-day) grid. A ticker that is
//! missing any day of the calendar is rejected rather than forward-filled, so
//! every `(ticker, day)` in a [`PanelStore`] resolves to exactly one [`Bar`].
//!
//! Sentiment is sparse. Looking up a pair without a record yields
//! `Neutral` with confidence 0, which contributes nothing to any signal.
//! Upstream producers are responsible for the news cut-off (articles after
//! the 4 p.m. close belong to the next trading day).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRICES_HEADER: [&str; 8] = ["date", "ticker", "open", "high", "low", "close", "volume", "vwap"];
pub const SENTIMENT_HEADER: [&str; 4] = ["date", "ticker", "label", "confidence"];
pub const FACTORS_HEADER: [&str; 8] = ["date", "mktrf", "smb", "hml", "rmw", "cma", "umd", "rf"];

const DATE_FORMAT: &str = "%Y-%m-%d";

/// One asset-day of adjusted market data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub vwap: f64,
}

impl Bar {
    /// Checks the OHLC ordering, positivity and finiteness invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let fields = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("vwap", self.vwap),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be a positive finite price, got {v}"));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("volume must be finite and >= 0, got {}", self.volume));
        }
        if self.high < self.low {
            return Err(format!("high {} < low {}", self.high, self.low));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} above min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SentimentLabel {
    Positive,
    Neutral,
    Negative,
}

impl SentimentLabel {
    /// The indicator value multiplying the confidence score.
    pub fn sign(self) -> f64 {
        match self {
            SentimentLabel::Positive => 1.0,
            SentimentLabel::Neutral => 0.0,
            SentimentLabel::Negative => -1.0,
        }
    }
}

impl FromStr for SentimentLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Positive" => Ok(SentimentLabel::Positive),
            "Neutral" => Ok(SentimentLabel::Neutral),
            "Negative" => Ok(SentimentLabel::Negative),
            other => Err(format!("unknown sentiment label `{other}`")),
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SentimentLabel::Positive => "Positive",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Negative => "Negative",
        };
        f.write_str(s)
    }
}

/// A classified news record for one `(ticker, date)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentRecord {
    pub date: NaiveDate,
    pub ticker: String,
    pub label: SentimentLabel,
    pub confidence: f64,
}

/// Label and confidence as stored inside a panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sentiment {
    pub label: SentimentLabel,
    pub confidence: f64,
}

impl Sentiment {
    pub const NEUTRAL: Sentiment = Sentiment {
        label: SentimentLabel::Neutral,
        confidence: 0.0,
    };

    /// `confidence * {+1, 0, -1}`.
    pub fn value(&self) -> f64 {
        self.confidence * self.label.sign()
    }
}

/// Daily factor returns, stored as decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub date: NaiveDate,
    pub mktrf: f64,
    pub smb: f64,
    pub hml: f64,
    pub rmw: f64,
    pub cma: f64,
    pub umd: f64,
    pub rf: f64,
}

impl FactorRow {
    /// The six factor returns in regression order.
    pub fn factors(&self) -> [f64; 6] {
        [self.mktrf, self.smb, self.hml, self.rmw, self.cma, self.umd]
    }
}

/// Aligned prices and sentiment for a fixed universe and calendar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelStore {
    tickers: Vec<String>,
    calendar: Vec<NaiveDate>,
    /// `bars[ticker][day]`
    bars: Vec<Vec<Bar>>,
    /// Per ticker, keyed by day index.
    sentiment: Vec<BTreeMap<usize, Sentiment>>,
}

/// A ticker dropped during loading because its history has gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedTicker {
    pub ticker: String,
    pub present_days: usize,
    pub calendar_days: usize,
}

#[derive(Debug, Clone)]
pub struct PriceLoad {
    pub panel: PanelStore,
    pub rejected: Vec<RejectedTicker>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SentimentReport {
    pub attached: usize,
    pub dropped: usize,
}

impl PanelStore {
    /// Builds a panel from an already-aligned grid.
    pub fn new(tickers: Vec<String>, calendar: Vec<NaiveDate>, bars: Vec<Vec<Bar>>) -> Result<Self> {
        if tickers.is_empty() || calendar.is_empty() {
            return Err(Error::Validation("panel needs at least one ticker and one day".into()));
        }
        if calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("calendar must be strictly increasing".into()));
        }
        let unique: BTreeSet<&String> = tickers.iter().collect();
        if unique.len() != tickers.len() {
            return Err(Error::Validation("duplicate ticker in universe".into()));
        }
        if bars.len() != tickers.len() {
            return Err(Error::Shape(format!(
                "{} bar rows for {} tickers",
                bars.len(),
                tickers.len()
            )));
        }
        for (ticker, row) in tickers.iter().zip(&bars) {
            if row.len() != calendar.len() {
                return Err(Error::Shape(format!(
                    "{ticker} has {} bars for a {}-day calendar",
                    row.len(),
                    calendar.len()
                )));
            }
            for (bar, day) in row.iter().zip(&calendar) {
                if bar.date != *day {
                    return Err(Error::Validation(format!(
                        "{ticker} bar dated {} sits on calendar day {day}",
                        bar.date
                    )));
                }
                bar.validate()
                    .map_err(|e| Error::Validation(format!("{ticker} {}: {e}", bar.date)))?;
            }
        }
        let sentiment = vec![BTreeMap::new(); tickers.len()];
        Ok(PanelStore {
            tickers,
            calendar,
            bars,
            sentiment,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    pub fn bar(&self, ticker: usize, day: usize) -> &Bar {
        &self.bars[ticker][day]
    }

    pub fn bars(&self, ticker: usize) -> &[Bar] {
        &self.bars[ticker]
    }

    pub fn closes(&self, ticker: usize) -> Vec<f64> {
        self.bars[ticker].iter().map(|b| b.close).collect()
    }

    pub fn volumes(&self, ticker: usize) -> Vec<f64> {
        self.bars[ticker].iter().map(|b| b.volume).collect()
    }

    /// Simple close-to-close return of every ticker from `day` to `day + 1`.
    pub fn forward_returns(&self, day: usize) -> Result<Vec<f64>> {
        if day + 1 >= self.n_days() {
            return Err(Error::EpisodeBounds(format!(
                "day {day} has no next trading day in a {}-day panel",
                self.n_days()
            )));
        }
        Ok(self
            .bars
            .iter()
            .map(|row| row[day + 1].close / row[day].close - 1.0)
            .collect())
    }

    /// Sentiment for a pair, defaulting to Neutral with confidence 0.
    pub fn sentiment(&self, ticker: usize, day: usize) -> Sentiment {
        self.sentiment[ticker]
            .get(&day)
            .copied()
            .unwrap_or(Sentiment::NEUTRAL)
    }

    pub fn sentiment_count(&self) -> usize {
        self.sentiment.iter().map(BTreeMap::len).sum()
    }

    /// Attaches sentiment records. Records outside the panel are dropped and
    /// counted; a second record for the same pair is an error.
    pub fn with_sentiment<I>(mut self, records: I) -> Result<(Self, SentimentReport)>
    where
        I: IntoIterator<Item = SentimentRecord>,
    {
        let mut report = SentimentReport::default();
        for rec in records {
            if !(0.0..=1.0).contains(&rec.confidence) {
                return Err(Error::Validation(format!(
                    "confidence {} for {} on {} outside [0, 1]",
                    rec.confidence, rec.ticker, rec.date
                )));
            }
            let (Some(t), Some(d)) = (self.ticker_index(&rec.ticker), self.day_index(rec.date)) else {
                report.dropped += 1;
                continue;
            };
            let entry = Sentiment {
                label: rec.label,
                confidence: rec.confidence,
            };
            if self.sentiment[t].insert(d, entry).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate sentiment record for {} on {}",
                    rec.ticker, rec.date
                )));
            }
            report.attached += 1;
        }
        Ok((self, report))
    }

    /// The panel restricted to calendar days `0..=last_day`.
    pub fn truncated(&self, last_day: usize) -> PanelStore {
        let end = (last_day + 1).min(self.n_days());
        PanelStore {
            tickers: self.tickers.clone(),
            calendar: self.calendar[..end].to_vec(),
            bars: self.bars.iter().map(|row| row[..end].to_vec()).collect(),
            sentiment: self
                .sentiment
                .iter()
                .map(|m| m.range(..end).map(|(k, v)| (*k, *v)).collect())
                .collect(),
        }
    }

    /// Writes the bars in the documented prices CSV layout.
    pub fn write_prices_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("date,ticker,open,high,low,close,volume,vwap\n");
        for (d, day) in self.calendar.iter().enumerate() {
            for (t, ticker) in self.tickers.iter().enumerate() {
                let b = &self.bars[t][d];
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    day.format(DATE_FORMAT),
                    ticker,
                    b.open,
                    b.high,
                    b.low,
                    b.close,
                    b.volume,
                    b.vwap
                ));
            }
        }
        write_file(path, &out)
    }

    /// Writes attached sentiment in the documented sentiment CSV layout.
    pub fn write_sentiment_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("date,ticker,label,confidence\n");
        for (d, day) in self.calendar.iter().enumerate() {
            for (t, ticker) in self.tickers.iter().enumerate() {
                if let Some(s) = self.sentiment[t].get(&d) {
                    out.push_str(&format!(
                        "{},{},{},{}\n",
                        day.format(DATE_FORMAT),
                        ticker,
                        s.label,
                        s.confidence
                    ));
                }
            }
        }
        write_file(path, &out)
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(contents.as_bytes()).map_err(io_err)
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn headers(reader: &mut csv::Reader<File>, path: &Path) -> Result<Vec<String>> {
    let h = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?;
    Ok(h.iter().map(str::to_string).collect())
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: csv::StringRecord,
}

impl Row<'_> {
    fn field(&self, i: usize, name: &str) -> Result<&str> {
        self.record
            .get(i)
            .ok_or_else(|| parse_error(self.path, self.line, format!("missing field `{name}`")))
    }

    fn date(&self, i: usize) -> Result<NaiveDate> {
        let s = self.field(i, "date")?;
        NaiveDate::parse_from_str(s, DATE_FORMAT)
            .map_err(|e| parse_error(self.path, self.line, format!("bad date `{s}`: {e}")))
    }

    fn number(&self, i: usize, name: &str) -> Result<f64> {
        let s = self.field(i, name)?;
        let v: f64 = s
            .parse()
            .map_err(|_| parse_error(self.path, self.line, format!("{name}: `{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(parse_error(self.path, self.line, format!("{name}: `{s}` is not finite")));
        }
        Ok(v)
    }
}

fn rows<'a>(reader: &'a mut csv::Reader<File>, path: &'a Path) -> impl Iterator<Item = Result<Row<'a>>> + 'a {
    reader.records().map(move |r| {
        let record = r.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        Ok(Row { path, line, record })
    })
}

/// Loads a prices CSV into a dense panel.
///
/// The calendar is the union of all dates in the file. Tickers that do not
/// cover every calendar day are rejected and listed in the returned report.
pub fn load_prices(path: &Path) -> Result<PriceLoad> {
    let mut reader = open_csv(path)?;
    let header = headers(&mut reader, path)?;
    if header != PRICES_HEADER {
        return Err(parse_error(
            path,
            1,
            format!("expected header `{}`, found `{}`", PRICES_HEADER.join(","), header.join(",")),
        ));
    }

    let mut by_ticker: BTreeMap<String, BTreeMap<NaiveDate, Bar>> = BTreeMap::new();
    for row in rows(&mut reader, path) {
        let row = row?;
        if row.record.len() != PRICES_HEADER.len() {
            return Err(parse_error(
                path,
                row.line,
                format!("expected {} fields, found {}", PRICES_HEADER.len(), row.record.len()),
            ));
        }
        let date = row.date(0)?;
        let ticker = row.field(1, "ticker")?.to_string();
        if ticker.is_empty() {
            return Err(parse_error(path, row.line, "empty ticker"));
        }
        let bar = Bar {
            date,
            open: row.number(2, "open")?,
            high: row.number(3, "high")?,
            low: row.number(4, "low")?,
            close: row.number(5, "close")?,
            volume: row.number(6, "volume")?,
            vwap: row.number(7, "vwap")?,
        };
        bar.validate().map_err(|e| {
            Error::Validation(format!("{}:{}: {ticker} {date}: {e}", path.display(), row.line))
        })?;
        if by_ticker.entry(ticker.clone()).or_default().insert(date, bar).is_some() {
            return Err(parse_error(path, row.line, format!("duplicate row for {ticker} on {date}")));
        }
    }
    if by_ticker.is_empty() {
        return Err(Error::Validation(format!("{} contains no price rows", path.display())));
    }

    let calendar: Vec<NaiveDate> = by_ticker
        .values()
        .flat_map(|m| m.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut tickers = Vec::new();
    let mut bars = Vec::new();
    let mut rejected = Vec::new();
    for (ticker, days) in by_ticker {
        if days.len() == calendar.len() {
            tickers.push(ticker);
            bars.push(days.into_values().collect());
        } else {
            log::warn!(
                "rejecting {ticker}: {} of {} calendar days present",
                days.len(),
                calendar.len()
            );
            rejected.push(RejectedTicker {
                ticker,
                present_days: days.len(),
                calendar_days: calendar.len(),
            });
        }
    }
    if tickers.is_empty() {
        return Err(Error::Validation(format!(
            "{}: every ticker has gaps, no complete history remains",
            path.display()
        )));
    }
    let panel = PanelStore::new(tickers, calendar, bars)?;
    Ok(PriceLoad { panel, rejected })
}

/// Reads a sentiment CSV and attaches it to `panel`.
pub fn load_sentiment(path: &Path, panel: PanelStore) -> Result<(PanelStore, SentimentReport)> {
    let mut reader = open_csv(path)?;
    let header = headers(&mut reader, path)?;
    if header != SENTIMENT_HEADER {
        return Err(parse_error(
            path,
            1,
            format!(
                "expected header `{}`, found `{}`",
                SENTIMENT_HEADER.join(","),
                header.join(",")
            ),
        ));
    }
    let mut records = Vec::new();
    for row in rows(&mut reader, path) {
        let row = row?;
        let date = row.date(0)?;
        let ticker = row.field(1, "ticker")?.to_string();
        let label: SentimentLabel = row
            .field(2, "label")?
            .parse()
            .map_err(|e: String| Error::Validation(format!("{}:{}: {e}", path.display(), row.line)))?;
        let confidence = row.number(3, "confidence")?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Validation(format!(
                "{}:{}: confidence {confidence} outside [0, 1]",
                path.display(),
                row.line
            )));
        }
        records.push(SentimentRecord {
            date,
            ticker,
            label,
            confidence,
        });
    }
    let (panel, report) = panel.with_sentiment(records)?;
    if report.dropped > 0 {
        log::info!("dropped {} sentiment records outside the panel", report.dropped);
    }
    Ok((panel, report))
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "no" => Some(false),
        "1" | "true" | "yes" => Some(true),
        _ => None,
    }
}

/// Loads a factors CSV, sorted by date.
///
/// When the header carries a trailing `percent` column, rows flagged
/// `1`/`true` are read as percentages and divided by 100.
pub fn load_factors(path: &Path) -> Result<Vec<FactorRow>> {
    let mut reader = open_csv(path)?;
    let header = headers(&mut reader, path)?;
    let has_percent = match header.len() {
        8 => false,
        9 if header[8] == "percent" => true,
        _ => false,
    };
    if header[..header.len().min(8)] != FACTORS_HEADER || (header.len() == 9 && !has_percent) || header.len() > 9 {
        return Err(parse_error(
            path,
            1,
            format!(
                "expected header `{}[,percent]`, found `{}`",
                FACTORS_HEADER.join(","),
                header.join(",")
            ),
        ));
    }

    let mut out: Vec<FactorRow> = Vec::new();
    for row in rows(&mut reader, path) {
        let row = row?;
        if row.record.len() != header.len() {
            return Err(parse_error(
                path,
                row.line,
                format!("expected {} fields, found {}", header.len(), row.record.len()),
            ));
        }
        let scale = if has_percent {
            let flag = row.field(8, "percent")?;
            match parse_flag(flag) {
                Some(true) => 0.01,
                Some(false) => 1.0,
                None => return Err(parse_error(path, row.line, format!("bad percent flag `{flag}`"))),
            }
        } else {
            1.0
        };
        let mut v = [0.0; 7];
        for (i, name) in FACTORS_HEADER[1..].iter().enumerate() {
            v[i] = row.number(i + 1, name)? * scale;
        }
        out.push(FactorRow {
            date: row.date(0)?,
            mktrf: v[0],
            smb: v[1],
            hml: v[2],
            rmw: v[3],
            cma: v[4],
            umd: v[5],
            rf: v[6],
        });
    }
    out.sort_by_key(|r| r.date);
    if let Some(w) = out.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(Error::Validation(format!(
            "{}: duplicate factor date {}",
            path.display(),
            w[0].date
        )));
    }
    Ok(out)
}

/// Writes factor rows as decimals (no percent column).
pub fn write_factors_csv(rows: &[FactorRow], path: &Path) -> Result<()> {
    let mut out = FACTORS_HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.date.format(DATE_FORMAT),
            r.mktrf,
            r.smb,
            r.hml,
            r.rmw,
            r.cma,
            r.umd,
            r.rf
        ));
    }
    write_file(path, &out)
}
