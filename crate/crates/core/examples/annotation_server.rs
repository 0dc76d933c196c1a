//! Serves the annotation and teleoperation endpoints over the bundled
//! datasets. `cargo run --example annotation_server -- 127.0.0.1:8080`

use std::path::PathBuf;

use canvas_nav::server::{serve, ServerConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CANVAS_NAV_LOG", "info")).init();
    let bind = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into()).parse()?;
    let cfg = ServerConfig {
        datasets: PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../datasets"),
        bind,
        ..ServerConfig::default()
    };
    println!("GET http://{bind}/maps, POST /datapoints, websocket /teleop/{{id}}?env=<name>");
    serve(cfg).await?;
    Ok(())
}
