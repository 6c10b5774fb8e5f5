from enum import Enum


class Algorithm(str, Enum):
    """Learning algorithm of an agent"""
    MADDPG = "maddpg"
    MATD3 = "matd3"
    IL_TD3 = "il_td3"

    @property
    def twin_critics(self) -> bool:
        return self is not Algorithm.MADDPG

    @property
    def centralized(self) -> bool:
        return self is not Algorithm.IL_TD3


class OutputKind(str, Enum):
    """Output activation of a dense network"""
    IDENTITY = "identity"
    SIGMOID_SCALED = "sigmoid_scaled"


class HiddenActivation(str, Enum):
    """Hidden layer activation"""
    RELU = "relu"


class CriticScope(str, Enum):
    """What a critic conditions on"""
    CENTRALIZED = "centralized"   # x ⊕ a_1..a_N
    LOCAL = "local"               # o_i ⊕ a_i
