"""
Text templates for run reports, tables and the command-line summary.
"""

RUN_REPORT = """Algorithm: {algorithm}
Condition: RT60={rt60} s, SER={ser_db} dB, seed={seed}
Selected output: {selected_output}

             processed   improvement
SDR  [dB]  {sdr_db:>10.2f}  {sdr_improve_db:>12.2f}
SIER [dB]  {sier_db:>10.2f}  {sier_improve_db:>12.2f}
SIIR [dB]  {siir_db:>10.2f}  {siir_improve_db:>12.2f}
"""

TABLE_TITLES = {
    "sdr_improve_db": "SDR improvement [dB]",
    "sier_improve_db": "SIER improvement [dB]",
    "siir_improve_db": "SIIR improvement [dB]",
}

TABLE_BLOCK = """{title}
(rows: algorithm, columns: RT60 [s] / SER [dB], mean over {count} runs)
{body}
"""

ORDERING_LINE = "[{status}] {claim}{detail}"

BENCH_HEADER = "Median wall time over {repeats} runs ({mode} engine, {frames} frames, single thread)"

BENCH_SLOPE = "Joint-SS log-log slope of time versus stacked size L over the L2 sweep: {slope:.2f}"

SEPARATE_SUMMARY = "Separated {sources} sources with {algorithm} ({mode}) in {elapsed:.2f} s -> {output_dir}"

SIMULATE_SUMMARY = "Scenario seed={seed} RT60={rt60} s SER={ser_db} dB ({seconds:.1f} s, {channels} mics) -> {output_dir}"
