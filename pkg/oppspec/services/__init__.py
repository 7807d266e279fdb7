# Simulation, ingestion, reports and commands
