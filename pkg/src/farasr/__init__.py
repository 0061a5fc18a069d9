"""farasr: far-field robust speech recognition at desk scale.

A sequence-to-sequence character recognizer trained so that embeddings of
clean and simulated far-field audio become indistinguishable, either via a
normalized L1 distance penalty between the two embeddings or via an
adversarially trained critic.
"""

__version__ = "0.1.0"
