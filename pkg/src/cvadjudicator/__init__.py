"""Clinical event extraction, cause-of-death adjudication, and reasoning-quality scoring.

The pipeline runs in two model-driven stages (event extraction from clinical
documents, then thought-tree adjudication of each death against committee
guidelines) followed by automated rubric scoring of the generated reasoning.
Every model call goes through a pluggable backend, so the whole pipeline can
replay deterministically offline from recorded fixtures.
"""

__version__ = "0.1.0"
