class SRTException(Exception): ...

class ArgumentParserError(SRTException): ...
class ConfigFileLoaderError(SRTException): ...

class DimensionError(SRTException): ...
class ParameterError(SRTException): ...
class LabelIndexError(ParameterError): ...
class ContractError(SRTException): ...
class EstimationError(SRTException): ...

class ParseError(SRTException): ...
class ValidationError(SRTException): ...
class FormatError(SRTException): ...
