//! The checked-in JSON schemas must match the file-format types.
//! Regenerate with `TEXSG_BLESS=1 cargo test -p texsg --test schemas`.

use std::path::PathBuf;

#[test]
fn checked_in_schemas_are_current() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas");
    let bless = std::env::var_os("TEXSG_BLESS").is_some();
    for (name, schema) in texsg::formats::schemas() {
        let text = serde_json::to_string_pretty(&schema).unwrap() + "\n";
        let path = dir.join(name);
        if bless {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(on_disk, text, "{} is stale", path.display());
    }
}
