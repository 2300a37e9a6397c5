//! Annotated interaction sessions and their segmentation into sections.
//!
//! A section is a maximal span in which the target user's behavior and the
//! behavior of every co-present user stay constant. The last section of a
//! user is open-ended: its configuration is frozen past the end of the
//! annotation so the engagement path can be extrapolated.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::Behavior;
use crate::error::{Error, Result};

/// Tolerance when checking a stored duration against the annotated span.
pub const DURATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorInterval {
    pub behavior: Behavior,
    pub start: f64,
    pub end: f64,
}

impl BehaviorInterval {
    pub fn new(behavior: Behavior, start: f64, end: f64) -> Self {
        Self {
            behavior,
            start,
            end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "UserFile")]
pub struct UserRecord {
    pub user_id: String,
    pub intervals: Vec<BehaviorInterval>,
    /// Observed interaction duration in seconds.
    pub observed_duration: f64,
}

#[derive(Deserialize)]
struct UserFile {
    user_id: String,
    intervals: Vec<BehaviorInterval>,
    observed_duration: Option<f64>,
}

impl From<UserFile> for UserRecord {
    fn from(file: UserFile) -> Self {
        let mut user = UserRecord {
            user_id: file.user_id,
            intervals: file.intervals,
            observed_duration: 0.0,
        };
        user.observed_duration = file.observed_duration.unwrap_or_else(|| user.span());
        user
    }
}

impl UserRecord {
    /// Builds a record whose observed duration is the annotated span.
    pub fn new(user_id: impl Into<String>, intervals: Vec<BehaviorInterval>) -> Self {
        let mut user = Self {
            user_id: user_id.into(),
            intervals,
            observed_duration: 0.0,
        };
        user.observed_duration = user.span();
        user
    }

    /// Builds a record from consecutive `(behavior, dwell)` pairs starting at `arrival`.
    pub fn from_dwells(user_id: impl Into<String>, arrival: f64, dwells: &[(Behavior, f64)]) -> Self {
        let mut t = arrival;
        let intervals = dwells
            .iter()
            .map(|&(behavior, dwell)| {
                let start = t;
                t += dwell;
                BehaviorInterval::new(behavior, start, t)
            })
            .collect();
        Self::new(user_id, intervals)
    }

    pub fn arrival(&self) -> f64 {
        self.intervals.first().map_or(0.0, |i| i.start)
    }

    pub fn departure(&self) -> f64 {
        self.intervals.last().map_or(0.0, |i| i.end)
    }

    pub fn span(&self) -> f64 {
        self.departure() - self.arrival()
    }

    /// Behavior active at `t`, with intervals treated as half-open `[start, end)`.
    pub fn behavior_at(&self, t: f64) -> Option<Behavior> {
        let idx = self.intervals.partition_point(|i| i.start <= t);
        let interval = self.intervals.get(idx.checked_sub(1)?)?;
        (t < interval.end).then_some(interval.behavior)
    }

    fn covers(&self, start: f64, end: f64) -> bool {
        self.arrival() <= start && end <= self.departure()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSession {
    pub session_id: String,
    pub users: Vec<UserRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoUsers,
    DuplicateUser { user: String },
    EmptyUser { user: String },
    InvalidTime { user: String, index: usize },
    EmptyInterval { user: String, index: usize },
    NonMonotone { user: String, index: usize },
    Overlap { user: String, at: f64 },
    Gap { user: String, at: f64 },
    DurationMismatch { user: String, observed: f64, span: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoUsers => write!(f, "session has no users"),
            Violation::DuplicateUser { user } => write!(f, "duplicate user id {user}"),
            Violation::EmptyUser { user } => write!(f, "user {user} has no intervals"),
            Violation::InvalidTime { user, index } => {
                write!(f, "user {user} interval {index}: times must be finite and >= 0")
            }
            Violation::EmptyInterval { user, index } => {
                write!(f, "user {user} interval {index}: start must be before end")
            }
            Violation::NonMonotone { user, index } => {
                write!(f, "user {user} interval {index}: starts before the previous interval")
            }
            Violation::Overlap { user, at } => write!(f, "overlap at t={at} for user {user}"),
            Violation::Gap { user, at } => write!(f, "gap at t={at} for user {user}"),
            Violation::DurationMismatch {
                user,
                observed,
                span,
            } => write!(
                f,
                "user {user}: observed duration {observed} differs from annotated span {span}"
            ),
        }
    }
}

/// One constant-configuration span of a target user's timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    /// 1-based position within the user's timeline.
    pub index: usize,
    pub start: f64,
    /// End of the annotated part. The last section extends past it when
    /// `open_ended` is set.
    pub end: f64,
    pub target_behavior: Behavior,
    /// Active behavior of each co-present user, in session user order.
    pub co_behaviors: Vec<Behavior>,
    pub open_ended: bool,
}

impl Section {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }
}

impl InteractionSession {
    pub fn new(session_id: impl Into<String>, users: Vec<UserRecord>) -> Self {
        Self {
            session_id: session_id.into(),
            users,
        }
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    fn user_index(&self, user_id: &str) -> Result<usize> {
        self.users
            .iter()
            .position(|u| u.user_id == user_id)
            .ok_or_else(|| Error::UnknownUser {
                session: self.session_id.clone(),
                user: user_id.to_owned(),
            })
    }

    /// Every invariant violation in the session; empty when the session is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.users.is_empty() {
            out.push(Violation::NoUsers);
        }
        for (i, user) in self.users.iter().enumerate() {
            let id = || user.user_id.clone();
            if self.users[..i].iter().any(|u| u.user_id == user.user_id) {
                out.push(Violation::DuplicateUser { user: id() });
            }
            if user.intervals.is_empty() {
                out.push(Violation::EmptyUser { user: id() });
                continue;
            }
            let mut times_ok = true;
            for (index, iv) in user.intervals.iter().enumerate() {
                if !(iv.start.is_finite() && iv.end.is_finite() && iv.start >= 0.0) {
                    out.push(Violation::InvalidTime { user: id(), index });
                    times_ok = false;
                } else if iv.start >= iv.end {
                    out.push(Violation::EmptyInterval { user: id(), index });
                    times_ok = false;
                }
            }
            for (index, pair) in user.intervals.windows(2).enumerate() {
                let (prev, next) = (pair[0], pair[1]);
                if next.start < prev.start {
                    out.push(Violation::NonMonotone {
                        user: id(),
                        index: index + 1,
                    });
                    times_ok = false;
                } else if next.start < prev.end {
                    out.push(Violation::Overlap {
                        user: id(),
                        at: next.start,
                    });
                    times_ok = false;
                } else if next.start > prev.end {
                    out.push(Violation::Gap {
                        user: id(),
                        at: prev.end,
                    });
                    times_ok = false;
                }
            }
            let span = user.span();
            if times_ok
                && !((user.observed_duration - span).abs() <= DURATION_TOLERANCE * span.max(1.0))
            {
                out.push(Violation::DurationMismatch {
                    user: id(),
                    observed: user.observed_duration,
                    span,
                });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSession {
                session: self.session_id.clone(),
                violations,
            })
        }
    }

    /// Splits the target user's timeline at every change of the joint behavior
    /// configuration.
    pub fn segment(&self, target: &str) -> Result<Vec<Section>> {
        let idx = self.user_index(target)?;
        self.ensure_valid()?;
        Ok(self.segment_user(idx))
    }

    /// Segmentation without validation; the session must already be valid.
    pub(crate) fn segment_user(&self, target_idx: usize) -> Vec<Section> {
        let target = &self.users[target_idx];
        let (arrival, departure) = (target.arrival(), target.departure());

        let mut cuts: Vec<f64> = target.intervals.iter().map(|i| i.start).collect();
        cuts.push(departure);
        for (i, other) in self.users.iter().enumerate() {
            if i == target_idx {
                continue;
            }
            let boundaries = other
                .intervals
                .iter()
                .map(|iv| iv.start)
                .chain(std::iter::once(other.departure()));
            cuts.extend(boundaries.filter(|&t| t > arrival && t < departure));
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut sections: Vec<Section> = Vec::with_capacity(cuts.len());
        let mut last_key: Option<(Behavior, Vec<(usize, Behavior)>)> = None;
        for w in cuts.windows(2) {
            let (start, end) = (w[0], w[1]);
            let mid = 0.5 * (start + end);
            let behavior = target
                .behavior_at(mid)
                .expect("valid timeline covers its own span");
            let co: Vec<(usize, Behavior)> = self
                .users
                .iter()
                .enumerate()
                .filter(|&(i, u)| i != target_idx && u.covers(start, end))
                .filter_map(|(i, u)| u.behavior_at(mid).map(|b| (i, b)))
                .collect();
            let key = (behavior, co);
            if last_key.as_ref() == Some(&key) {
                sections.last_mut().expect("key implies a section").end = end;
                continue;
            }
            sections.push(Section {
                index: sections.len() + 1,
                start,
                end,
                target_behavior: behavior,
                co_behaviors: key.1.iter().map(|&(_, b)| b).collect(),
                open_ended: false,
            });
            last_key = Some(key);
        }
        if let Some(last) = sections.last_mut() {
            last.open_ended = true;
        }
        sections
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("session serializes");
        s.push('\n');
        s
    }

    /// Imports a tab-separated annotation export: one row per interval with
    /// columns `user_id`, `behavior`, `start`, `end`. A header row and lines
    /// starting with `#` are skipped. Users keep their order of first appearance.
    pub fn from_tsv_str(session_id: &str, text: &str) -> std::result::Result<Self, String> {
        let mut users: Vec<(String, Vec<BehaviorInterval>)> = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(format!("line {}: expected 4 tab-separated fields", line_no + 1));
            }
            let (start, end) = match (fields[2].parse::<f64>(), fields[3].parse::<f64>()) {
                (Ok(s), Ok(e)) => (s, e),
                _ if users.is_empty() && line_no == 0 => continue,
                _ => return Err(format!("line {}: start/end must be numbers", line_no + 1)),
            };
            let behavior: Behavior = fields[1]
                .parse()
                .map_err(|e: Error| format!("line {}: {e}", line_no + 1))?;
            let interval = BehaviorInterval::new(behavior, start, end);
            match users.iter_mut().find(|(id, _)| id == fields[0]) {
                Some((_, intervals)) => intervals.push(interval),
                None => users.push((fields[0].to_owned(), vec![interval])),
            }
        }
        let users = users
            .into_iter()
            .map(|(id, mut intervals)| {
                intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
                UserRecord::new(id, intervals)
            })
            .collect();
        Ok(Self::new(session_id, users))
    }

    /// Loads a session file; `.tsv` files go through the tab-separated import.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "tsv") {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Self::from_tsv_str(&id, &text)
        } else {
            Self::from_json_str(&text)
        };
        parsed.map_err(|m| Error::parse(path, m))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

/// Loads every `.json` / `.tsv` session in a directory, ordered by file name.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<InteractionSession>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json" || e == "tsv"))
        .collect();
    paths.sort();
    paths.iter().map(InteractionSession::load).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Behavior::*;

    fn iv(behavior: Behavior, start: f64, end: f64) -> BehaviorInterval {
        BehaviorInterval::new(behavior, start, end)
    }

    fn spans(sections: &[Section]) -> Vec<(f64, f64)> {
        sections.iter().map(|s| (s.start, s.end)).collect()
    }

    #[test]
    fn single_user_uses_own_boundaries() {
        let s = InteractionSession::new(
            "s",
            vec![UserRecord::new("a", vec![iv(Gaze, 0.0, 30.0), iv(LookAround, 30.0, 50.0)])],
        );
        let sections = s.segment("a").unwrap();
        assert_eq!(spans(&sections), vec![(0.0, 30.0), (30.0, 50.0)]);
        assert_eq!(sections[0].target_behavior, Gaze);
        assert_eq!(sections[1].target_behavior, LookAround);
        assert!(sections.iter().all(|s| s.co_behaviors.is_empty()));
        assert!(!sections[0].open_ended && sections[1].open_ended);
        assert_eq!(sections[1].index, 2);
    }

    #[test]
    fn co_user_boundaries_split_the_target() {
        let s = InteractionSession::new(
            "s",
            vec![
                UserRecord::new("a", vec![iv(Gaze, 0.0, 60.0)]),
                UserRecord::new("b", vec![iv(TalkToRobot, 0.0, 20.0), iv(Touch, 20.0, 60.0)]),
            ],
        );
        let sections = s.segment("a").unwrap();
        assert_eq!(spans(&sections), vec![(0.0, 20.0), (20.0, 60.0)]);
        assert_eq!(sections[0].co_behaviors, vec![TalkToRobot]);
        assert_eq!(sections[1].co_behaviors, vec![Touch]);
    }

    #[test]
    fn parent_prowls_while_child_switches() {
        let s = InteractionSession::new(
            "s",
            vec![
                UserRecord::new("parent", vec![iv(Prowl, 0.0, 100.0)]),
                UserRecord::new("child", vec![iv(Gaze, 0.0, 40.0), iv(TalkToRobot, 40.0, 100.0)]),
            ],
        );
        let sections = s.segment("parent").unwrap();
        assert_eq!(spans(&sections), vec![(0.0, 40.0), (40.0, 100.0)]);
        assert!(sections.iter().all(|s| s.target_behavior == Prowl));
    }

    #[test]
    fn absent_users_are_not_co_present() {
        let s = InteractionSession::new(
            "s",
            vec![
                UserRecord::new("a", vec![iv(Prowl, 0.0, 100.0)]),
                UserRecord::new("b", vec![iv(Gaze, 20.0, 50.0)]),
                UserRecord::new("c", vec![iv(Touch, 80.0, 150.0)]),
            ],
        );
        let sections = s.segment("a").unwrap();
        assert_eq!(spans(&sections), vec![(0.0, 20.0), (20.0, 50.0), (50.0, 80.0), (80.0, 100.0)]);
        let co: Vec<_> = sections.iter().map(|s| s.co_behaviors.clone()).collect();
        assert_eq!(co, vec![vec![], vec![Gaze], vec![], vec![Touch]]);

        // b arrives after a and leaves before; a's boundaries outside b's span are ignored
        let sections = s.segment("b").unwrap();
        assert_eq!(spans(&sections), vec![(20.0, 50.0)]);
        assert_eq!(sections[0].co_behaviors, vec![Prowl]);
    }

    #[test]
    fn splitting_an_interval_does_not_change_sections() {
        let base = InteractionSession::new(
            "s",
            vec![
                UserRecord::new("a", vec![iv(Gaze, 0.0, 30.0), iv(LookAround, 30.0, 70.0)]),
                UserRecord::new("b", vec![iv(TalkToRobot, 10.0, 60.0)]),
            ],
        );
        let mut refined = base.clone();
        refined.users[1].intervals = vec![iv(TalkToRobot, 10.0, 25.0), iv(TalkToRobot, 25.0, 60.0)];
        refined.users[0].intervals = vec![
            iv(Gaze, 0.0, 30.0),
            iv(LookAround, 30.0, 41.5),
            iv(LookAround, 41.5, 70.0),
        ];
        assert_eq!(base.segment("a").unwrap(), refined.segment("a").unwrap());
    }

    #[test]
    fn unknown_target_is_an_error() {
        let s = InteractionSession::new("s", vec![UserRecord::new("a", vec![iv(Gaze, 0.0, 1.0)])]);
        assert!(matches!(s.segment("zz"), Err(Error::UnknownUser { .. })));
    }

    #[test]
    fn contiguous_session_validates() {
        let s = InteractionSession::new(
            "s",
            vec![UserRecord::new("a", vec![iv(Gaze, 0.0, 10.0), iv(Touch, 10.0, 12.0)])],
        );
        assert!(s.validate().is_empty());
    }

    #[test]
    fn overlap_is_reported_with_location() {
        let s = InteractionSession::new(
            "s",
            vec![UserRecord::new("a", vec![iv(Gaze, 0.0, 10.0), iv(Touch, 8.0, 12.0)])],
        );
        let v = s.validate();
        assert!(v.iter().any(|v| v.to_string().starts_with("overlap at t=8")), "{v:?}");
        assert!(s.segment("a").is_err());
    }

    #[test]
    fn gaps_and_bad_times_are_reported() {
        let s = InteractionSession::new(
            "s",
            vec![
                UserRecord::new("a", vec![iv(Gaze, 0.0, 10.0), iv(Touch, 11.0, 12.0)]),
                UserRecord::new("b", vec![iv(Gaze, 5.0, 5.0)]),
                UserRecord::new("c", vec![iv(Gaze, -1.0, 5.0)]),
                UserRecord::new("d", vec![iv(Gaze, 4.0, 6.0), iv(Touch, 2.0, 3.0)]),
                UserRecord::new("a", vec![iv(Gaze, 0.0, 1.0)]),
            ],
        );
        let v = s.validate();
        assert!(v.contains(&Violation::Gap { user: "a".into(), at: 10.0 }));
        assert!(v.contains(&Violation::EmptyInterval { user: "b".into(), index: 0 }));
        assert!(v.contains(&Violation::InvalidTime { user: "c".into(), index: 0 }));
        assert!(v.contains(&Violation::NonMonotone { user: "d".into(), index: 1 }));
        assert!(v.contains(&Violation::DuplicateUser { user: "a".into() }));
        let empty = InteractionSession::new("e", vec![]);
        assert_eq!(empty.validate(), vec![Violation::NoUsers]);
    }

    #[test]
    fn duration_mismatch_names_user() {
        let mut user = UserRecord::new("zoe", vec![iv(Gaze, 0.0, 10.0)]);
        user.observed_duration = 12.0;
        let s = InteractionSession::new("s", vec![user]);
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("zoe"));
    }

    #[test]
    fn tsv_import_groups_by_user() {
        let text = "user_id\tbehavior\tstart\tend\n\
                    u1\tGaze\t0\t30\n\
                    u2\tProwl\t5.5\t20\n\
                    u1\tLookAround\t30\t50\n";
        let s = InteractionSession::from_tsv_str("g1", text).unwrap();
        assert_eq!(s.session_id, "g1");
        assert_eq!(s.users.len(), 2);
        assert_eq!(s.users[0].user_id, "u1");
        assert_eq!(s.users[0].intervals.len(), 2);
        assert_eq!(s.users[0].observed_duration, 50.0);
        assert_eq!(s.users[1].observed_duration, 14.5);
        assert!(s.validate().is_empty());
        assert!(InteractionSession::from_tsv_str("g", "u1\tDance\t0\t1\n").is_err());
    }

    #[test]
    fn json_without_duration_uses_span() {
        let text = r#"{"session_id":"x","users":[{"user_id":"a","intervals":[{"behavior":"Gaze","start":1.0,"end":4.5}]}]}"#;
        let s = InteractionSession::from_json_str(text).unwrap();
        assert_eq!(s.users[0].observed_duration, 3.5);
        let again = InteractionSession::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn behavior_lookup_is_half_open() {
        let u = UserRecord::from_dwells("a", 2.0, &[(Gaze, 3.0), (Touch, 1.0)]);
        assert_eq!(u.behavior_at(1.9), None);
        assert_eq!(u.behavior_at(2.0), Some(Gaze));
        assert_eq!(u.behavior_at(5.0), Some(Touch));
        assert_eq!(u.behavior_at(6.0), None);
    }
}
