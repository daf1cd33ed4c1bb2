import os

from dotenv import load_dotenv

from app import create_app
from app.models.separation import Algorithm, Mode
from app.services.metrics_service import metrics_service, render_report
from app.services.pipeline_service import process
from app.services.scenario_service import build_living_room_scenario, scenario_service
from app.utils.stft_utils import analyze, synthesize

# --------------------------------------------------------------
# Load configuration
# --------------------------------------------------------------

load_dotenv()
OUTPUT_DIR = os.getenv("JOINTSEP_OUTPUT_DIR", "output/quickstart")

config = create_app(overrides={"segment_seconds": 2.0, "iters": 10})

# --------------------------------------------------------------
# Simulate a living-room scenario
# --------------------------------------------------------------

scenario = build_living_room_scenario(config.seed, rt60=0.3, ser_db=0.0, segment_seconds=config.segment_seconds)
scenario_service.save(scenario, os.path.join(OUTPUT_DIR, "scenario"))
print("Microphones:", scenario.mic_signals.shape, "at", scenario.sample_rate, "Hz")

# --------------------------------------------------------------
# Separate with every algorithm in batch mode
# --------------------------------------------------------------

stft = config.stft_config()
x = analyze(scenario.mic_signals, stft)
r = analyze(scenario.farend_reference, stft)

for algorithm in (Algorithm.DRAEC_BSS, Algorithm.AEC_DR_BSS, Algorithm.DR_AEC_BSS, Algorithm.JOINT_SS):
    estimate, _ = process(x, r, config, algorithm, Mode.BATCH)
    report = metrics_service.evaluate(synthesize(estimate), scenario, algorithm.value)
    print(render_report(report))

# --------------------------------------------------------------
# Same scenario frame by frame
# --------------------------------------------------------------

estimate, _ = process(x, r, config, Algorithm.DRAEC_BSS, Mode.ONLINE)
report = metrics_service.evaluate(synthesize(estimate), scenario, "DRAEC-BSS (online)")
print(render_report(report))
