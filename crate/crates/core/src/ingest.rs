//! BGP update ingestion: MRT dumps (RFC 6396 BGP4MP / BGP4MP_ET message
//! records carrying BGP UPDATE payloads) and a plain-text fixture format,
//! normalized into a single stream of [`UpdateRecord`] values.

use std::io::Read;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use crate::error::{Error, Result};

/// ORIGIN path attribute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Igp,
    Egp,
    Incomplete,
    /// UPDATE carried no ORIGIN attribute (e.g. pure withdrawals).
    Absent,
}

impl Origin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Origin::Igp => "IGP",
            Origin::Egp => "EGP",
            Origin::Incomplete => "INCOMPLETE",
            Origin::Absent => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Prefix {
    pub addr: IpAddr,
    pub mask_len: u8,
}

impl Prefix {
    pub fn new(addr: IpAddr, mask_len: u8) -> Result<Self> {
        let limit = match addr {
            IpAddr::V4(_) => 32,
            IpAddr::V6(_) => 128,
        };
        if mask_len > limit {
            return Err(Error::Data(format!(
                "mask length {} exceeds {} for {}",
                mask_len, limit, addr
            )));
        }
        Ok(Prefix { addr, mask_len })
    }
}

impl std::fmt::Display for Prefix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.addr, self.mask_len)
    }
}

/// One parsed BGP UPDATE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateRecord {
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub peer_as: u32,
    pub peer_ip: IpAddr,
    pub announced: Vec<Prefix>,
    pub withdrawn: Vec<Prefix>,
    /// AS_PATH with AS_SET segments flattened in order.
    pub as_path: Vec<u32>,
    /// True when the original path contained an AS_SET segment.
    pub has_as_set: bool,
    pub origin: Origin,
}

impl UpdateRecord {
    fn check_invariants(&self) -> Result<()> {
        for w in &self.withdrawn {
            if self.announced.contains(w) {
                return Err(Error::Data(format!(
                    "prefix {} both announced and withdrawn",
                    w
                )));
            }
        }
        if !self.announced.is_empty() && self.as_path.is_empty() {
            return Err(Error::Data("announcement without AS_PATH".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AddressFamily {
    #[default]
    Any,
    V4,
    V6,
}

#[derive(Debug, Clone, Default)]
pub struct IngestConfig {
    /// Only keep updates from these peer ASes (Table-1 style monitored AS list).
    pub peer_as_filter: Option<Vec<u32>>,
    /// Half-open time range [start, end) in epoch seconds.
    pub start: Option<i64>,
    pub end: Option<i64>,
    pub family: AddressFamily,
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s >= e {
                return Err(Error::Config(format!(
                    "time range start {} must precede end {}",
                    s, e
                )));
            }
        }
        Ok(())
    }

    fn passes(&self, rec: &UpdateRecord) -> bool {
        if let Some(filter) = &self.peer_as_filter {
            if !filter.contains(&rec.peer_as) {
                return false;
            }
        }
        if let Some(s) = self.start {
            if rec.timestamp < s {
                return false;
            }
        }
        if let Some(e) = self.end {
            if rec.timestamp >= e {
                return false;
            }
        }
        match self.family {
            AddressFamily::Any => true,
            AddressFamily::V4 => rec.peer_ip.is_ipv4(),
            AddressFamily::V6 => rec.peer_ip.is_ipv6(),
        }
    }
}

/// Outcome counters; `emitted + skipped() + dropped` equals the number of
/// MRT records seen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestCounters {
    pub emitted: u64,
    /// BGP messages other than UPDATE (OPEN, KEEPALIVE, state changes).
    pub skipped_non_update: u64,
    /// MRT record types/subtypes this parser does not handle.
    pub skipped_unknown_type: u64,
    /// Records excluded by the peer/time/family filter.
    pub skipped_filtered: u64,
    /// Records with malformed BGP payloads, dropped rather than fatal.
    pub dropped: u64,
}

impl IngestCounters {
    pub fn skipped(&self) -> u64 {
        self.skipped_non_update + self.skipped_unknown_type + self.skipped_filtered
    }

    pub fn total(&self) -> u64 {
        self.emitted + self.skipped() + self.dropped
    }
}

// MRT record types we handle (RFC 6396 section 4).
const MRT_BGP4MP: u16 = 16;
const MRT_BGP4MP_ET: u16 = 17;
const BGP4MP_MESSAGE: u16 = 1;
const BGP4MP_MESSAGE_AS4: u16 = 4;

const BGP_MSG_UPDATE: u8 = 2;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|s| u16::from_be_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
    }
}

fn read_ip(cur: &mut Cursor, afi: u16) -> Option<IpAddr> {
    match afi {
        1 => cur
            .take(4)
            .map(|s| IpAddr::V4(Ipv4Addr::new(s[0], s[1], s[2], s[3]))),
        2 => cur.take(16).map(|s| {
            let mut o = [0u8; 16];
            o.copy_from_slice(s);
            IpAddr::V6(Ipv6Addr::from(o))
        }),
        _ => None,
    }
}

fn read_v4_prefix(cur: &mut Cursor) -> Option<Prefix> {
    let bits = cur.u8()?;
    if bits > 32 {
        return None;
    }
    let octets = cur.take(bits.div_ceil(8) as usize)?;
    let mut addr = [0u8; 4];
    addr[..octets.len()].copy_from_slice(octets);
    Some(Prefix {
        addr: IpAddr::V4(Ipv4Addr::from(addr)),
        mask_len: bits,
    })
}

/// Parse the body of a BGP UPDATE message (after the 19-byte BGP header).
/// `as4` selects 4-byte AS_PATH encoding (BGP4MP_MESSAGE_AS4 subtype).
fn parse_update_body(body: &[u8], as4: bool) -> Option<(Vec<Prefix>, Vec<Prefix>, Vec<u32>, bool, Origin)> {
    let mut cur = Cursor::new(body);

    let withdrawn_len = cur.u16()? as usize;
    let withdrawn_bytes = cur.take(withdrawn_len)?;
    let mut withdrawn = Vec::new();
    {
        let mut wc = Cursor::new(withdrawn_bytes);
        while wc.remaining() > 0 {
            withdrawn.push(read_v4_prefix(&mut wc)?);
        }
    }

    let attr_len = cur.u16()? as usize;
    let attr_bytes = cur.take(attr_len)?;
    let mut as_path = Vec::new();
    let mut has_as_set = false;
    let mut origin = Origin::Absent;
    {
        let mut ac = Cursor::new(attr_bytes);
        while ac.remaining() > 0 {
            let flags = ac.u8()?;
            let type_code = ac.u8()?;
            let len = if flags & 0x10 != 0 {
                ac.u16()? as usize
            } else {
                ac.u8()? as usize
            };
            let value = ac.take(len)?;
            match type_code {
                1 => {
                    // ORIGIN
                    if value.len() != 1 {
                        return None;
                    }
                    origin = match value[0] {
                        0 => Origin::Igp,
                        1 => Origin::Egp,
                        2 => Origin::Incomplete,
                        _ => return None,
                    };
                }
                2 => {
                    // AS_PATH: segments of (type, count, ASes)
                    let mut sc = Cursor::new(value);
                    while sc.remaining() > 0 {
                        let seg_type = sc.u8()?;
                        let count = sc.u8()? as usize;
                        if seg_type == 1 {
                            has_as_set = true;
                        } else if seg_type != 2 {
                            return None;
                        }
                        for _ in 0..count {
                            let asn = if as4 {
                                sc.u32()?
                            } else {
                                sc.u16()? as u32
                            };
                            as_path.push(asn);
                        }
                    }
                }
                _ => {} // other attributes are not needed for the features
            }
        }
    }

    // NLRI fills the rest of the message.
    let mut announced = Vec::new();
    while cur.remaining() > 0 {
        announced.push(read_v4_prefix(&mut cur)?);
    }

    Some((announced, withdrawn, as_path, has_as_set, origin))
}

/// Decode a concatenation of MRT records. Truncated framing is a hard
/// error carrying the byte offset; per-record BGP payload corruption
/// degrades to drop-and-count.
pub fn parse_mrt_stream(bytes: &[u8], cfg: &IngestConfig) -> Result<(Vec<UpdateRecord>, IngestCounters)> {
    cfg.validate()?;

    // Optional gzip outer wrapper.
    let decompressed;
    let bytes = if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Mrt {
                offset: 0,
                message: format!("gzip: {}", e),
            })?;
        decompressed = out;
        &decompressed
    } else {
        bytes
    };

    let mut records = Vec::new();
    let mut counters = IngestCounters::default();
    let mut pos: usize = 0;

    while pos < bytes.len() {
        let header_off = pos as u64;
        if bytes.len() - pos < 12 {
            return Err(Error::Mrt {
                offset: header_off,
                message: "truncated MRT header".into(),
            });
        }
        let h = &bytes[pos..pos + 12];
        let timestamp = u32::from_be_bytes([h[0], h[1], h[2], h[3]]) as i64;
        let mrt_type = u16::from_be_bytes([h[4], h[5]]);
        let subtype = u16::from_be_bytes([h[6], h[7]]);
        let length = u32::from_be_bytes([h[8], h[9], h[10], h[11]]) as usize;
        pos += 12;
        if bytes.len() - pos < length {
            return Err(Error::Mrt {
                offset: header_off,
                message: format!(
                    "record body truncated: declared {} bytes, {} remain",
                    length,
                    bytes.len() - pos
                ),
            });
        }
        let body = &bytes[pos..pos + length];
        pos += length;

        let is_et = mrt_type == MRT_BGP4MP_ET;
        if mrt_type != MRT_BGP4MP && !is_et {
            counters.skipped_unknown_type += 1;
            continue;
        }
        let as4 = match subtype {
            BGP4MP_MESSAGE => false,
            BGP4MP_MESSAGE_AS4 => true,
            _ => {
                counters.skipped_unknown_type += 1;
                continue;
            }
        };

        let mut cur = Cursor::new(body);
        if is_et {
            // Extended-timestamp variant carries microseconds first.
            if cur.u32().is_none() {
                counters.dropped += 1;
                continue;
            }
        }
        let parsed = (|| {
            let peer_as = if as4 { cur.u32()? } else { cur.u16()? as u32 };
            let _local_as = if as4 { cur.u32()? } else { cur.u16()? as u32 };
            let _ifindex = cur.u16()?;
            let afi = cur.u16()?;
            let peer_ip = read_ip(&mut cur, afi)?;
            let _local_ip = read_ip(&mut cur, afi)?;
            // BGP message header: 16-byte marker, length, type.
            let _marker = cur.take(16)?;
            let msg_len = cur.u16()? as usize;
            let msg_type = cur.u8()?;
            if msg_len < 19 || msg_len - 19 > cur.remaining() {
                return None;
            }
            let msg_body = cur.take(msg_len - 19)?;
            Some((peer_as, peer_ip, msg_type, msg_body))
        })();
        let Some((peer_as, peer_ip, msg_type, msg_body)) = parsed else {
            counters.dropped += 1;
            continue;
        };
        if msg_type != BGP_MSG_UPDATE {
            counters.skipped_non_update += 1;
            continue;
        }
        let Some((announced, withdrawn, as_path, has_as_set, origin)) =
            parse_update_body(msg_body, as4)
        else {
            counters.dropped += 1;
            continue;
        };
        let rec = UpdateRecord {
            timestamp,
            peer_as,
            peer_ip,
            announced,
            withdrawn,
            as_path,
            has_as_set,
            origin,
        };
        if rec.check_invariants().is_err() {
            counters.dropped += 1;
            continue;
        }
        if !cfg.passes(&rec) {
            counters.skipped_filtered += 1;
            continue;
        }
        counters.emitted += 1;
        records.push(rec);
    }

    Ok((records, counters))
}

/// Text fixture format: `ts|peer_as|A/W|prefix|as_path|origin` per line,
/// `#` comments and blank lines ignored. One prefix per line.
pub fn parse_text_log(text: &str) -> Result<Vec<UpdateRecord>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 6 {
            return Err(Error::TextLog {
                line: lineno,
                message: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let fail = |message: String| Error::TextLog {
            line: lineno,
            message,
        };
        let timestamp: i64 = fields[0]
            .parse()
            .map_err(|_| fail(format!("bad timestamp {:?}", fields[0])))?;
        let peer_as: u32 = fields[1]
            .parse()
            .map_err(|_| fail(format!("bad peer AS {:?}", fields[1])))?;
        let announce = match fields[2] {
            "A" => true,
            "W" => false,
            other => return Err(fail(format!("action must be A or W, found {:?}", other))),
        };
        let prefix = parse_prefix(fields[3]).map_err(|e| fail(e.to_string()))?;
        let as_path: Vec<u32> = if fields[4].is_empty() {
            Vec::new()
        } else {
            fields[4]
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| fail(format!("bad AS {:?}", t))))
                .collect::<Result<_>>()?
        };
        let origin = match fields[5] {
            "IGP" => Origin::Igp,
            "EGP" => Origin::Egp,
            "INCOMPLETE" => Origin::Incomplete,
            "" => Origin::Absent,
            other => return Err(fail(format!("bad origin {:?}", other))),
        };
        let rec = UpdateRecord {
            timestamp,
            peer_as,
            peer_ip: IpAddr::V4(Ipv4Addr::UNSPECIFIED),
            announced: if announce { vec![prefix] } else { Vec::new() },
            withdrawn: if announce { Vec::new() } else { vec![prefix] },
            as_path,
            has_as_set: false,
            origin,
        };
        rec.check_invariants().map_err(|e| fail(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_prefix(s: &str) -> Result<Prefix> {
    let (addr, len) = s
        .split_once('/')
        .ok_or_else(|| Error::Data(format!("prefix {:?} missing /len", s)))?;
    let addr: IpAddr = addr
        .parse()
        .map_err(|_| Error::Data(format!("bad address {:?}", addr)))?;
    let mask_len: u8 = len
        .parse()
        .map_err(|_| Error::Data(format!("bad mask length {:?}", len)))?;
    Prefix::new(addr, mask_len)
}

/// Render records back to the text fixture format, one line per prefix.
pub fn render_text_log(records: &[UpdateRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        let path = rec
            .as_path
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        for p in &rec.announced {
            out.push_str(&format!(
                "{}|{}|A|{}|{}|{}\n",
                rec.timestamp,
                rec.peer_as,
                p,
                path,
                rec.origin.as_str()
            ));
        }
        for p in &rec.withdrawn {
            out.push_str(&format!("{}|{}|W|{}||\n", rec.timestamp, rec.peer_as, p));
        }
    }
    out
}

/// Merge timestamp-sorted streams into one, ties broken by
/// (peer_as, input index).
pub fn merge_streams(streams: Vec<Vec<UpdateRecord>>) -> Result<Vec<UpdateRecord>> {
    for (i, s) in streams.iter().enumerate() {
        for w in s.windows(2) {
            if w[1].timestamp < w[0].timestamp {
                return Err(Error::Data(format!(
                    "stream {} not sorted: timestamp {} follows {}",
                    i, w[1].timestamp, w[0].timestamp
                )));
            }
        }
    }
    let total: usize = streams.iter().map(|s| s.len()).sum();
    let mut cursors: Vec<usize> = vec![0; streams.len()];
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let mut best: Option<(i64, u32, usize)> = None;
        for (i, s) in streams.iter().enumerate() {
            if let Some(rec) = s.get(cursors[i]) {
                let key = (rec.timestamp, rec.peer_as, i);
                if best.map_or(true, |b| key < b) {
                    best = Some(key);
                }
            }
        }
        let (_, _, i) = best.expect("nonempty cursor while records remain");
        out.push(streams[i][cursors[i]].clone());
        cursors[i] += 1;
    }
    Ok(out)
}
