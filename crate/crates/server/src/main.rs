use anyhow::Result;

#[tokio::main]
async fn main() -> Result<()> {
    let addr = std::env::args()
        .nth(1)
        .or_else(|| std::env::var("FLOWFILL_ADDR").ok())
        .unwrap_or_else(|| "127.0.0.1:8787".to_string());
    let (bound, handle) = flowfill_server::serve(&addr).await?;
    println!("flowfill server listening on http://{bound}");
    handle.await?;
    Ok(())
}
