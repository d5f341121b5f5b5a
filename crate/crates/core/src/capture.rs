//! Interrupt-driven acquisition of comparator edges.
//!
//! The MCU sleeps until the first comparator edge on any channel, then
//! timestamps every edge on a low-power timer. After one second the edges are
//! replayed into a binary time-frequency image: a cell is set when the channel
//! was high at least once inside the window.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Edge direction of a comparator transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Rising,
    Falling,
}

impl Polarity {
    pub fn as_char(self) -> char {
        match self {
            Polarity::Rising => 'R',
            Polarity::Falling => 'F',
        }
    }

    fn expected_after(prev: Option<Polarity>) -> Polarity {
        match prev {
            None | Some(Polarity::Falling) => Polarity::Rising,
            Some(Polarity::Rising) => Polarity::Falling,
        }
    }
}

/// A comparator edge timestamped in seconds, as produced by the front-end simulator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub time_s: f64,
    pub polarity: Polarity,
}

/// Edges of one channel in continuous time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeStream {
    pub channel: usize,
    pub edges: Vec<Edge>,
}

/// A comparator edge timestamped on the capture timer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub tick: u64,
    pub polarity: Polarity,
}

/// Edges of one channel on the capture timer: strictly increasing ticks,
/// alternating polarity starting with a rising edge.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventStream {
    pub channel: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(channel: usize) -> Self {
        Self { channel, events: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<Event> = None;
        for ev in &self.events {
            let want = Polarity::expected_after(prev.map(|p| p.polarity));
            if ev.polarity != want {
                return Err(malformed(self.channel, format!("expected {want:?} at tick {}", ev.tick)));
            }
            if let Some(p) = prev {
                if ev.tick <= p.tick {
                    return Err(malformed(self.channel, format!("tick {} not after {}", ev.tick, p.tick)));
                }
            }
            prev = Some(*ev);
        }
        Ok(())
    }

    /// High intervals `[rise, fall)` in ticks; a trailing rising edge is closed at `end_tick`.
    pub fn high_intervals(&self, end_tick: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut rise = None;
        for ev in &self.events {
            match ev.polarity {
                Polarity::Rising => rise = Some(ev.tick),
                Polarity::Falling => {
                    if let Some(r) = rise.take() {
                        out.push((r, ev.tick));
                    }
                }
            }
        }
        if let Some(r) = rise {
            if r < end_tick {
                out.push((r, end_tick));
            }
        }
        out
    }
}

fn malformed(channel: usize, reason: String) -> Error {
    Error::MalformedStream { channel, reason }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaptureConfig {
    pub tick_rate: u32,
    pub duration_s: f64,
    pub window_ms: u32,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self { tick_rate: 32_768, duration_s: 1.0, window_ms: 10 }
    }
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tick_rate == 0 {
            return Err(Error::Parameter("tick_rate must be positive".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Parameter("duration_s must be positive".into()));
        }
        if self.window_ms == 0 {
            return Err(Error::Parameter("window_ms must be positive".into()));
        }
        Ok(())
    }

    /// First tick past the end of the capture.
    pub fn total_ticks(&self) -> u64 {
        (self.duration_s * self.tick_rate as f64).round() as u64
    }

    /// Number of complete windows; a trailing partial window is dropped.
    pub fn n_windows(&self) -> usize {
        (self.duration_s * 1000.0 / self.window_ms as f64 + 1e-9).floor() as usize
    }

    pub fn window_of(&self, tick: u64) -> usize {
        (tick * 1000 / (self.tick_rate as u64 * self.window_ms as u64)) as usize
    }
}

/// Round-to-nearest with ties up.
fn quantize(seconds: f64, tick_rate: u32) -> u64 {
    (seconds * tick_rate as f64 + 0.5).floor().max(0.0) as u64
}

/// Re-times continuous edges onto the capture timer.
///
/// Time zero is the globally earliest edge across all channels. Edges at or
/// beyond the capture duration are discarded.
pub fn capture(raw: &[EdgeStream], cfg: &CaptureConfig) -> Result<Vec<EventStream>> {
    cfg.validate()?;
    for s in raw {
        let mut prev: Option<&Edge> = None;
        for e in &s.edges {
            if !e.time_s.is_finite() {
                return Err(malformed(s.channel, "non-finite timestamp".into()));
            }
            let want = Polarity::expected_after(prev.map(|p| p.polarity));
            if e.polarity != want {
                return Err(malformed(s.channel, format!("expected {want:?} at {} s", e.time_s)));
            }
            if let Some(p) = prev {
                if e.time_s < p.time_s {
                    return Err(malformed(s.channel, "edges not time-ordered".into()));
                }
            }
            prev = Some(e);
        }
    }

    let t0 = raw
        .iter()
        .filter_map(|s| s.edges.first())
        .map(|e| e.time_s)
        .fold(f64::INFINITY, f64::min);
    let end = cfg.total_ticks();

    Ok(raw
        .iter()
        .map(|s| {
            let mut out = EventStream::new(s.channel);
            for e in &s.edges {
                let mut tick = quantize(e.time_s - t0, cfg.tick_rate);
                if let Some(last) = out.events.last() {
                    if tick <= last.tick {
                        tick = last.tick + 1;
                    }
                }
                if tick >= end {
                    break;
                }
                out.events.push(Event { tick, polarity: e.polarity });
            }
            out
        })
        .collect())
}

/// Channels × windows single-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySpectrogram {
    pub n_channels: usize,
    pub n_windows: usize,
    pub window_ms: u32,
    /// Row-major (channel, window), each entry 0 or 1.
    pub bits: Vec<u8>,
}

impl BinarySpectrogram {
    pub fn zeros(n_channels: usize, n_windows: usize, window_ms: u32) -> Self {
        Self { n_channels, n_windows, window_ms, bits: vec![0; n_channels * n_windows] }
    }

    pub fn get(&self, channel: usize, window: usize) -> u8 {
        self.bits[channel * self.n_windows + window]
    }

    pub fn set(&mut self, channel: usize, window: usize, value: u8) {
        self.bits[channel * self.n_windows + window] = value & 1;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    /// Header line `n_channels,n_windows,window_ms` then little-endian u32
    /// words holding the row-major bit sequence (bit i of word j is entry 32j+i).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},{},{}", self.n_channels, self.n_windows, self.window_ms)?;
        let mut words = vec![0u32; self.bits.len().div_ceil(32)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b != 0 {
                words[i / 32] |= 1 << (i % 32);
            }
        }
        for word in words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let fields: Vec<usize> = header
            .trim()
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("spectrogram header {header:?}: {e}")))?;
        let [n_channels, n_windows, window_ms] = fields[..] else {
            return Err(Error::Parse(format!("spectrogram header {header:?}: expected 3 fields")));
        };
        let n = n_channels * n_windows;
        let mut raw = vec![0u8; n.div_ceil(32) * 4];
        r.read_exact(&mut raw)?;
        let bits = (0..n)
            .map(|i| {
                let word = u32::from_le_bytes(raw[i / 32 * 4..i / 32 * 4 + 4].try_into().unwrap());
                ((word >> (i % 32)) & 1) as u8
            })
            .collect();
        Ok(Self { n_channels, n_windows, window_ms: window_ms as u32, bits })
    }
}

/// Replays tick-domain streams into a binary image: bit (c, w) is set when
/// channel c is high at any tick of window w. A rising edge counts from its own
/// tick; a channel still high at the end stays high to the end of the capture.
pub fn rasterize(streams: &[EventStream], cfg: &CaptureConfig) -> Result<BinarySpectrogram> {
    cfg.validate()?;
    let n_windows = cfg.n_windows();
    let mut img = BinarySpectrogram::zeros(streams.len(), n_windows, cfg.window_ms);
    let end = cfg.total_ticks();
    for (row, s) in streams.iter().enumerate() {
        s.validate()?;
        for (rise, fall) in s.high_intervals(end) {
            let fall = fall.min(end);
            if rise >= fall {
                continue;
            }
            let first = cfg.window_of(rise);
            if first >= n_windows {
                continue;
            }
            let last = cfg.window_of(fall - 1).min(n_windows - 1);
            for w in first..=last {
                img.set(row, w, 1);
            }
        }
    }
    Ok(img)
}

/// Number of interrupts per channel; both edge polarities trigger one.
pub fn interrupt_count(streams: &[EventStream]) -> Vec<usize> {
    streams.iter().map(|s| s.events.len()).collect()
}

/// Event-stream text format: header `tick_rate=<int>`, then one `channel,tick,polarity`
/// line per event with polarity `R` or `F`.
pub fn write_events<W: Write>(mut w: W, streams: &[EventStream], tick_rate: u32) -> Result<()> {
    let mut buf = String::new();
    writeln!(buf, "tick_rate={tick_rate}").unwrap();
    for s in streams {
        for ev in &s.events {
            writeln!(buf, "{},{},{}", s.channel, ev.tick, ev.polarity.as_char()).unwrap();
        }
    }
    w.write_all(buf.as_bytes())?;
    Ok(())
}

/// Parses the event-stream text format. `n_channels` forces the number of
/// returned streams; otherwise it is the highest channel seen plus one.
pub fn read_events<R: BufRead>(r: R, n_channels: Option<usize>) -> Result<(u32, Vec<EventStream>)> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty event file".into()))??;
    let tick_rate = header
        .trim()
        .strip_prefix("tick_rate=")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Parse(format!("bad event header {header:?}")))?;

    let mut streams: Vec<EventStream> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("event line {}: {line:?}", lineno + 2));
        let mut parts = line.split(',');
        let channel: usize = parts.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let tick: u64 = parts.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let polarity = match parts.next().map(str::trim) {
            Some("R") => Polarity::Rising,
            Some("F") => Polarity::Falling,
            _ => return Err(bad()),
        };
        while streams.len() <= channel {
            streams.push(EventStream::new(streams.len()));
        }
        streams[channel].events.push(Event { tick, polarity });
    }
    if let Some(n) = n_channels {
        if streams.len() > n {
            return Err(Error::Shape(format!("event file has {} channels, expected {n}", streams.len())));
        }
        while streams.len() < n {
            streams.push(EventStream::new(streams.len()));
        }
    }
    for s in &streams {
        s.validate()?;
    }
    Ok((tick_rate, streams))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(t: f64, p: Polarity) -> Edge {
        Edge { time_s: t, polarity: p }
    }

    fn ev(tick: u64, p: Polarity) -> Event {
        Event { tick, polarity: p }
    }

    #[test]
    fn capture_of_silence_is_empty() {
        let raw = vec![EdgeStream { channel: 0, edges: vec![] }, EdgeStream { channel: 1, edges: vec![] }];
        let out = capture(&raw, &CaptureConfig::default()).unwrap();
        assert!(out.iter().all(|s| s.events.is_empty()));
    }

    #[test]
    fn first_edge_defines_time_zero() {
        let raw = vec![EdgeStream { channel: 0, edges: vec![edge(3.2, Polarity::Rising)] }];
        let out = capture(&raw, &CaptureConfig::default()).unwrap();
        assert_eq!(out[0].events, vec![ev(0, Polarity::Rising)]);
    }

    #[test]
    fn quantizes_to_nearest_tick() {
        let raw = vec![
            EdgeStream { channel: 0, edges: vec![edge(3.2, Polarity::Rising)] },
            EdgeStream { channel: 1, edges: vec![edge(3.2 + 0.99995, Polarity::Rising)] },
        ];
        let out = capture(&raw, &CaptureConfig::default()).unwrap();
        assert_eq!(out[1].events, vec![ev(32766, Polarity::Rising)]);
    }

    #[test]
    fn ties_round_up() {
        assert_eq!(quantize(0.5 / 32768.0, 32768), 1);
        assert_eq!(quantize(1.5 / 32768.0, 32768), 2);
    }

    #[test]
    fn drops_events_past_duration() {
        let raw = vec![EdgeStream {
            channel: 0,
            edges: vec![edge(0.0, Polarity::Rising), edge(0.5, Polarity::Falling), edge(1.2, Polarity::Rising)],
        }];
        let out = capture(&raw, &CaptureConfig::default()).unwrap();
        assert_eq!(out[0].events.len(), 2);
    }

    #[test]
    fn collapsed_edges_are_separated() {
        let raw = vec![EdgeStream {
            channel: 0,
            edges: vec![edge(0.0, Polarity::Rising), edge(1e-7, Polarity::Falling)],
        }];
        let out = capture(&raw, &CaptureConfig::default()).unwrap();
        assert_eq!(out[0].events, vec![ev(0, Polarity::Rising), ev(1, Polarity::Falling)]);
    }

    #[test]
    fn capture_rejects_non_alternating_input() {
        let raw = vec![EdgeStream { channel: 2, edges: vec![edge(0.0, Polarity::Falling)] }];
        assert!(matches!(capture(&raw, &CaptureConfig::default()), Err(Error::MalformedStream { channel: 2, .. })));
    }

    #[test]
    fn rasterize_empty_is_zero() {
        let streams = vec![EventStream::new(0), EventStream::new(1)];
        let img = rasterize(&streams, &CaptureConfig::default()).unwrap();
        assert_eq!((img.n_channels, img.n_windows), (2, 100));
        assert_eq!(img.count_ones(), 0);
    }

    #[test]
    fn rasterize_interval_overlap() {
        // 5 ms and 12 ms expressed in ticks at a 1 kHz tick rate for exactness
        let cfg = CaptureConfig { tick_rate: 1000, duration_s: 1.0, window_ms: 10 };
        let s = EventStream { channel: 0, events: vec![ev(5, Polarity::Rising), ev(12, Polarity::Falling)] };
        let img = rasterize(&[s], &cfg).unwrap();
        let set: Vec<usize> = (0..img.n_windows).filter(|&w| img.get(0, w) == 1).collect();
        assert_eq!(set, vec![0, 1]);
    }

    #[test]
    fn rasterize_falling_tick_is_exclusive() {
        let cfg = CaptureConfig { tick_rate: 1000, duration_s: 1.0, window_ms: 10 };
        let s = EventStream { channel: 0, events: vec![ev(3, Polarity::Rising), ev(10, Polarity::Falling)] };
        let img = rasterize(&[s], &cfg).unwrap();
        assert_eq!(img.get(0, 0), 1);
        assert_eq!(img.get(0, 1), 0);
    }

    #[test]
    fn trailing_high_extends_to_end() {
        let cfg = CaptureConfig::default();
        let s = EventStream { channel: 0, events: vec![ev(32_000, Polarity::Rising)] };
        let img = rasterize(&[s], &cfg).unwrap();
        assert_eq!(img.get(0, 99), 1);
        assert_eq!(img.get(0, 96), 0);
        assert_eq!(img.get(0, 97), 1);
    }

    #[test]
    fn rasterize_rejects_malformed() {
        let s = EventStream { channel: 0, events: vec![ev(5, Polarity::Rising), ev(6, Polarity::Rising)] };
        assert!(matches!(rasterize(&[s], &CaptureConfig::default()), Err(Error::MalformedStream { .. })));
    }

    #[test]
    fn twenty_five_ms_windows() {
        let cfg = CaptureConfig { window_ms: 25, ..Default::default() };
        assert_eq!(cfg.n_windows(), 40);
    }

    #[test]
    fn interrupt_counts_both_edges() {
        assert_eq!(interrupt_count(&[EventStream::new(0)]), vec![0]);
        let s = EventStream { channel: 0, events: vec![ev(1, Polarity::Rising), ev(9, Polarity::Falling)] };
        assert_eq!(interrupt_count(&[s]), vec![2]);
    }

    #[test]
    fn event_file_round_trip() {
        let streams = vec![
            EventStream { channel: 0, events: vec![ev(0, Polarity::Rising), ev(40, Polarity::Falling)] },
            EventStream::new(1),
            EventStream { channel: 2, events: vec![ev(7, Polarity::Rising)] },
        ];
        let mut buf = Vec::new();
        write_events(&mut buf, &streams, 32768).unwrap();
        assert!(buf.starts_with(b"tick_rate=32768\n0,0,R\n0,40,F\n2,7,R\n"));
        let (rate, back) = read_events(&buf[..], Some(4)).unwrap();
        assert_eq!(rate, 32768);
        assert_eq!(&back[..3], &streams[..]);
        assert!(back[3].events.is_empty());
    }

    #[test]
    fn spectrogram_file_layout() {
        let mut img = BinarySpectrogram::zeros(2, 20, 10);
        img.set(0, 0, 1);
        img.set(1, 13, 1); // flat index 33
        let mut buf = Vec::new();
        img.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"2,20,10\n");
        assert_eq!(&buf[8..], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(BinarySpectrogram::read_from(&buf[..]).unwrap(), img);
    }
}
