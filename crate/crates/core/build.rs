use std::process::Command;

fn main() {
    let id = std::env::var("HOMOCELL_BUILD_ID").ok().or_else(|| {
        let out = Command::new("git").args(["rev-parse", "--short=12", "HEAD"]).output().ok()?;
        out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
    });
    let version = std::env::var("CARGO_PKG_VERSION").unwrap_or_default();
    let id = id.filter(|s| !s.is_empty()).map_or(format!("v{version}"), |g| format!("v{version}-g{g}"));
    println!("cargo:rustc-env=HOMOCELL_BUILD_ID={id}");
    println!("cargo:rerun-if-env-changed=HOMOCELL_BUILD_ID");
    println!("cargo:rerun-if-changed=../../.git/HEAD");
}
