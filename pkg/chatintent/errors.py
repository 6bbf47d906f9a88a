'''
Exception hierarchy. Every exception carries the exit code the CLI returns for it.
'''


class ChatIntentError(Exception):
    exit_code = 1


class ConfigError(ChatIntentError):
    exit_code = 2


class PrerequisiteError(ChatIntentError):
    exit_code = 3


class GatewayTransportError(ChatIntentError):
    exit_code = 4

    def __init__(self, message, attempts = 0, status = None):
        super().__init__(message)
        self.attempts = attempts
        self.status = status


class GatewayProtocolError(ChatIntentError):
    exit_code = 5


class CandidateParseError(ChatIntentError):
    exit_code = 5

    def __init__(self, message, raw_text = ""):
        super().__init__(message)
        self.raw_text = raw_text


class MetricError(ChatIntentError):
    exit_code = 5


class CorpusFormatError(ChatIntentError):
    exit_code = 5

    def __init__(self, message, line_number = None):
        super().__init__(message)
        self.line_number = line_number


class EncodingError(ChatIntentError):
    exit_code = 5


class TrainingDivergedError(ChatIntentError):
    exit_code = 5
