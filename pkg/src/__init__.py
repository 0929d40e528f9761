# HydroTrack spectroscopic hydration pipeline
