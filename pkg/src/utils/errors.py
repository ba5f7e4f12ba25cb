class ElasticAlignError(Exception):
    """Base class of all errors raised by the package."""


class InvalidInputError(ElasticAlignError, ValueError):
    """Functions, grids or shapes that violate their invariants."""


class InvalidWarpError(InvalidInputError):
    """A warping function that is not monotone or not endpoint preserving."""


class InvalidParameterError(ElasticAlignError, ValueError):
    """A configuration value outside its admissible range."""


class MissingTruthError(ElasticAlignError):
    """A truth-requiring metric was asked for without simulation truth."""


class DataFormatError(InvalidInputError):
    """
    Malformed input file
    Params:
        message: what went wrong
        path: file that failed to parse
        line: 1-based line number in that file (header is line 1)
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = str(path)
            if line is not None:
                where += ":{}".format(line)
            where += ": "
        super().__init__(where + message)


class RegistrationError(ElasticAlignError, RuntimeError):
    """
    Failure inside a registration stage
    Params:
        message: what went wrong
        stage: name of the stage (e.g. "componentwise", "variogram", "inner")
        context: indices locating the failure, e.g. {"i": 3, "j": 1, "z": 2, "k": 0}
    """

    def __init__(self, message, stage=None, context=None):
        self.stage = stage
        self.context = dict(context or {})
        prefix = "[{}] ".format(stage) if stage else ""
        suffix = ""
        if self.context:
            suffix = " ({})".format(
                ", ".join("{}={}".format(k, v) for k, v in self.context.items())
            )
        super().__init__(prefix + message + suffix)
