use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Subscriber;

/// On-disk subscriber list:
///
/// ```toml
/// [[subscriber]]
/// subscriber_id = "001010000000001"
/// enabled = true
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberFile {
    #[serde(default, rename = "subscriber")]
    pub subscribers: Vec<Subscriber>,
}

pub fn parse_subscriber_file(text: &str) -> Result<SubscriberFile, toml::de::Error> {
    toml::from_str(text)
}

pub fn load_subscriber_file(path: &Path) -> std::io::Result<SubscriberFile> {
    let text = std::fs::read_to_string(path)?;
    parse_subscriber_file(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_list() {
        let f = parse_subscriber_file(
            r#"
[[subscriber]]
subscriber_id = "001010000000001"
enabled = true

[[subscriber]]
subscriber_id = "001010000000002"
enabled = false
"#,
        )
        .unwrap();
        assert_eq!(f.subscribers.len(), 2);
        assert!(!f.subscribers[1].enabled);
        assert_eq!(
            parse_subscriber_file("").unwrap(),
            SubscriberFile::default()
        );
    }
}
