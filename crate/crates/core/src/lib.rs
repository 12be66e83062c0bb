pub mod imagegen;
pub mod report;
pub mod rules;
pub mod session;
pub mod settings;
pub mod sim;
pub mod study;

/// CSV writer with the export dialect: comma, LF line endings, minimal quoting.
pub(crate) fn csv_writer<W: std::io::Write>(inner: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(inner)
}
