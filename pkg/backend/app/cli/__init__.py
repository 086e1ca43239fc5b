from app.cli.router import CommandRouter
from app.cli import synth, train, evaluate, ablate, analyze_flow, export_uncertainty, plot_timestamps

cli_router = CommandRouter()

# Include all subcommand routers
cli_router.include_router(synth.router)
cli_router.include_router(train.router)
cli_router.include_router(evaluate.router)
cli_router.include_router(ablate.router)
cli_router.include_router(analyze_flow.router)
cli_router.include_router(export_uncertainty.router)
cli_router.include_router(plot_timestamps.router)
