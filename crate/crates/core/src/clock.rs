use chrono::{DateTime, SecondsFormat, Utc};

/// Current UTC time as RFC 3339. When `SOURCE_DATE_EPOCH` is set to a unix
/// timestamp, that instant is used instead so reruns are byte-identical.
pub fn now_rfc3339() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}
