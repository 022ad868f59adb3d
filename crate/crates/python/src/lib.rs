use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use bender_core::config::Profile;
use bender_core::debugger;
use bender_core::dram::violations_csv;
use bender_core::emulator::{RunOutcome, RunReport};
use bender_core::isa::{parse_register, RegisterId};
use bender_core::platform::{trace_csv, Platform as CorePlatform, PosTask};
use bender_core::program::{Program as CoreProgram, ProgramError};

create_exception!(dram_bender, BenderError, PyException);
create_exception!(dram_bender, UndefinedLabel, BenderError);
create_exception!(dram_bender, DuplicateLabel, BenderError);
create_exception!(dram_bender, ProgramTooLarge, BenderError);
create_exception!(dram_bender, ReadRunExceedsFifo, BenderError);
create_exception!(dram_bender, InvalidInstruction, BenderError);
create_exception!(dram_bender, ConfigError, BenderError);
create_exception!(dram_bender, LoadError, BenderError);

fn program_err(e: ProgramError) -> PyErr {
    let msg = e.to_string();
    match e {
        ProgramError::UndefinedLabel(_) => UndefinedLabel::new_err(msg),
        ProgramError::DuplicateLabel(_) => DuplicateLabel::new_err(msg),
        ProgramError::ProgramTooLarge { .. } => ProgramTooLarge::new_err(msg),
        ProgramError::ReadRunExceedsFifo { .. } => ReadRunExceedsFifo::new_err(msg),
        ProgramError::Isa(_) => InvalidInstruction::new_err(msg),
    }
}

fn reg(name: &str) -> PyResult<RegisterId> {
    parse_register(name).ok_or_else(|| PyValueError::new_err(format!("unknown register `{name}`")))
}

fn profile(spec: &str) -> PyResult<Profile> {
    Profile::resolve(spec).map_err(|e| ConfigError::new_err(e.to_string()))
}

/// Instruction-by-instruction program builder.
#[pyclass(unsendable, module = "dram_bender")]
#[derive(Default)]
struct Program {
    inner: CoreProgram,
}

#[pymethods]
impl Program {
    #[new]
    fn new() -> Self {
        Program::default()
    }

    /// Builds a program from assembly text.
    #[staticmethod]
    fn parse(source: &str) -> PyResult<Self> {
        Ok(Program { inner: CoreProgram::parse(source).map_err(program_err)? })
    }

    /// Resolves labels, inserts readback hints and returns the binary image.
    fn assemble<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let a = self.inner.assemble().map_err(program_err)?;
        Ok(PyBytes::new(py, &a.image))
    }

    fn append_label(&mut self, name: &str) -> PyResult<()> {
        self.inner.append_label(name).map_err(program_err)?;
        Ok(())
    }

    #[pyo3(signature = (bank, row, delay=0, inc_bank=false, inc_row=false))]
    fn append_act(&mut self, bank: &str, row: &str, delay: u64, inc_bank: bool, inc_row: bool) -> PyResult<()> {
        self.inner.append_act(reg(bank)?, inc_bank, reg(row)?, inc_row, delay).map_err(program_err)?;
        Ok(())
    }

    #[pyo3(signature = (bank, delay=0, inc_bank=false, aux=false))]
    fn append_pre(&mut self, bank: &str, delay: u64, inc_bank: bool, aux: bool) -> PyResult<()> {
        self.inner.append_pre(reg(bank)?, inc_bank, aux, delay).map_err(program_err)?;
        Ok(())
    }

    #[pyo3(signature = (delay=0))]
    fn append_prea(&mut self, delay: u64) -> PyResult<()> {
        self.inner.append_prea(delay).map_err(program_err)?;
        Ok(())
    }

    #[pyo3(signature = (bank, col, delay=0, inc_bank=false, inc_col=false, auto_precharge=false, aux=false))]
    #[allow(clippy::too_many_arguments)]
    fn append_read(
        &mut self,
        bank: &str,
        col: &str,
        delay: u64,
        inc_bank: bool,
        inc_col: bool,
        auto_precharge: bool,
        aux: bool,
    ) -> PyResult<()> {
        self.inner.append_read(reg(bank)?, inc_bank, reg(col)?, inc_col, auto_precharge, aux, delay).map_err(program_err)?;
        Ok(())
    }

    #[pyo3(signature = (bank, col, delay=0, inc_bank=false, inc_col=false, auto_precharge=false, aux=false))]
    #[allow(clippy::too_many_arguments)]
    fn append_write(
        &mut self,
        bank: &str,
        col: &str,
        delay: u64,
        inc_bank: bool,
        inc_col: bool,
        auto_precharge: bool,
        aux: bool,
    ) -> PyResult<()> {
        self.inner.append_write(reg(bank)?, inc_bank, reg(col)?, inc_col, auto_precharge, aux, delay).map_err(program_err)?;
        Ok(())
    }

    #[pyo3(signature = (delay=0))]
    fn append_ref(&mut self, delay: u64) -> PyResult<()> {
        self.inner.append_ref(delay).map_err(program_err)?;
        Ok(())
    }

    #[pyo3(signature = (delay=0))]
    fn append_zqs(&mut self, delay: u64) -> PyResult<()> {
        self.inner.append_zqs(delay).map_err(program_err)?;
        Ok(())
    }

    fn append_ld(&mut self, rd: &str, base: &str, offset: i64) -> PyResult<()> {
        self.inner.append_ld(reg(rd)?, reg(base)?, offset).map_err(program_err)?;
        Ok(())
    }

    fn append_st(&mut self, data: &str, base: &str, offset: i64) -> PyResult<()> {
        self.inner.append_st(reg(data)?, reg(base)?, offset).map_err(program_err)?;
        Ok(())
    }

    fn append_and(&mut self, rd: &str, rs1: &str, rs2: &str) -> PyResult<()> {
        self.inner.append_and(reg(rd)?, reg(rs1)?, reg(rs2)?).map_err(program_err)?;
        Ok(())
    }

    fn append_or(&mut self, rd: &str, rs1: &str, rs2: &str) -> PyResult<()> {
        self.inner.append_or(reg(rd)?, reg(rs1)?, reg(rs2)?).map_err(program_err)?;
        Ok(())
    }

    fn append_xor(&mut self, rd: &str, rs1: &str, rs2: &str) -> PyResult<()> {
        self.inner.append_xor(reg(rd)?, reg(rs1)?, reg(rs2)?).map_err(program_err)?;
        Ok(())
    }

    fn append_add(&mut self, rd: &str, rs1: &str, rs2: &str) -> PyResult<()> {
        self.inner.append_add(reg(rd)?, reg(rs1)?, reg(rs2)?).map_err(program_err)?;
        Ok(())
    }

    fn append_sub(&mut self, rd: &str, rs1: &str, rs2: &str) -> PyResult<()> {
        self.inner.append_sub(reg(rd)?, reg(rs1)?, reg(rs2)?).map_err(program_err)?;
        Ok(())
    }

    fn append_addi(&mut self, rd: &str, rs1: &str, imm: i64) -> PyResult<()> {
        self.inner.append_addi(reg(rd)?, reg(rs1)?, imm).map_err(program_err)?;
        Ok(())
    }

    fn append_mv(&mut self, rd: &str, rs1: &str) -> PyResult<()> {
        self.inner.append_mv(reg(rd)?, reg(rs1)?).map_err(program_err)?;
        Ok(())
    }

    fn append_src(&mut self, rd: &str, amount: &str) -> PyResult<()> {
        self.inner.append_src(reg(rd)?, reg(amount)?).map_err(program_err)?;
        Ok(())
    }

    fn append_li(&mut self, rd: &str, imm: i64) -> PyResult<()> {
        self.inner.append_li(reg(rd)?, imm).map_err(program_err)?;
        Ok(())
    }

    /// Branch to `target` if `rs1 < rs2`.
    fn append_bl(&mut self, target: &str, rs1: &str, rs2: &str) -> PyResult<()> {
        self.inner.append_bl(target, reg(rs1)?, reg(rs2)?).map_err(program_err)?;
        Ok(())
    }

    /// Branch to `target` if `reg < bound`.
    fn append_bl_imm(&mut self, register: &str, bound: i64, target: &str) -> PyResult<()> {
        self.inner.append_bl_imm(reg(register)?, bound, target).map_err(program_err)?;
        Ok(())
    }

    fn append_beq(&mut self, target: &str, rs1: &str, rs2: &str) -> PyResult<()> {
        self.inner.append_beq(target, reg(rs1)?, reg(rs2)?).map_err(program_err)?;
        Ok(())
    }

    fn append_jump(&mut self, target: &str) -> PyResult<()> {
        self.inner.append_jump(target).map_err(program_err)?;
        Ok(())
    }

    fn append_sleep(&mut self, cycles: i64) -> PyResult<()> {
        self.inner.append_sleep(cycles).map_err(program_err)?;
        Ok(())
    }

    fn append_ldwd(&mut self, slice: i64, rs: &str) -> PyResult<()> {
        self.inner.append_ldwd(slice, reg(rs)?).map_err(program_err)?;
        Ok(())
    }

    fn append_ldpc(&mut self, rd: &str, counter: i64) -> PyResult<()> {
        self.inner.append_ldpc(reg(rd)?, counter).map_err(program_err)?;
        Ok(())
    }

    fn append_sre(&mut self) -> PyResult<()> {
        self.inner.append_sre().map_err(program_err)?;
        Ok(())
    }

    fn append_srx(&mut self) -> PyResult<()> {
        self.inner.append_srx().map_err(program_err)?;
        Ok(())
    }

    fn append_end(&mut self) -> PyResult<()> {
        self.inner.append_end().map_err(program_err)?;
        Ok(())
    }
}

fn outcome_str(o: &RunOutcome) -> String {
    match o {
        RunOutcome::Halted => "halted".into(),
        RunOutcome::Trapped(t) => format!("trapped: {t}"),
        RunOutcome::MaxCyclesExceeded => "max_cycles_exceeded".into(),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &RunReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("outcome", outcome_str(&r.outcome))?;
    d.set_item("halted", r.halted())?;
    d.set_item("cycles", r.cycles)?;
    d.set_item("bus_slots", r.bus_slots)?;
    d.set_item("instructions", r.instructions)?;
    let h = PyDict::new(py);
    let c = &r.histogram;
    for (k, v) in [("ACT", c.act), ("PRE", c.pre), ("PREA", c.prea), ("READ", c.read), ("WRITE", c.write), ("REF", c.refresh), ("ZQS", c.zqs)] {
        h.set_item(k, v)?;
    }
    d.set_item("histogram", h)?;
    d.set_item("violations", r.violations.len())?;
    d.set_item("violations_csv", violations_csv(&r.violations))?;
    d.set_item("transfers", r.transfers)?;
    d.set_item("fifo_high_water", r.fifo_high_water)?;
    d.set_item("fifo_overflows", r.fifo_overflows)?;
    d.set_item("hint_stalls", r.stalls.hint)?;
    d.set_item("scheduler_stalls", r.stalls.scheduler)?;
    d.set_item("load_use_stalls", r.stalls.load_use)?;
    d.set_item("flips", r.flips)?;
    Ok(d)
}

fn task(name: &str) -> PyResult<PosTask> {
    PosTask::ALL
        .into_iter()
        .find(|t| t.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown periodic task `{name}`")))
}

/// A core, a device model and the readback path.
#[pyclass(unsendable, module = "dram_bender")]
struct Platform {
    inner: CorePlatform,
}

#[pymethods]
impl Platform {
    /// Loads a profile from a JSON file or a built-in name.
    #[staticmethod]
    fn initialize(config: &str) -> PyResult<Self> {
        Ok(Platform { inner: CorePlatform::new(&profile(config)?) })
    }

    fn execute<'py>(&mut self, py: Python<'py>, image: &[u8]) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.execute(image).map_err(|e| LoadError::new_err(e.to_string()))?;
        report_dict(py, &r)
    }

    /// Up to `n` 64-byte transfers, in FIFO order.
    fn receive_data<'py>(&mut self, py: Python<'py>, n: usize) -> PyResult<Bound<'py, PyList>> {
        let items: Vec<Bound<'py, PyBytes>> = self.inner.receive_data(n).iter().map(|t| PyBytes::new(py, t)).collect();
        PyList::new(py, items)
    }

    fn set_periodic(&mut self, task_name: &str, on: bool) -> PyResult<()> {
        self.inner.set_periodic(task(task_name)?, on);
        Ok(())
    }

    fn set_drain_rate(&mut self, rate: f64) {
        self.inner.set_drain_rate(rate);
    }

    fn set_max_cycles(&mut self, cycles: u64) {
        self.inner.set_max_cycles(cycles);
    }

    fn enable_trace(&mut self, on: bool) {
        self.inner.enable_trace(on);
    }

    fn trace_csv(&self) -> String {
        trace_csv(self.inner.sys.trace())
    }

    fn register(&self, name: &str) -> PyResult<u32> {
        let r = reg(name)?;
        if !r.is_narrow() {
            return Err(PyValueError::new_err("use wdr_slice for the wide data register"));
        }
        Ok(self.inner.core.state.regs[r.index() as usize])
    }
}

/// Runs `image` on a fresh platform and returns its violation report as CSV.
#[pyfunction]
fn simulate(image: &[u8], config: &str) -> PyResult<String> {
    let r = debugger::simulate(image, &profile(config)?).map_err(|e| LoadError::new_err(e.to_string()))?;
    Ok(violations_csv(&r.violations))
}

/// Assembles program text into a binary image.
#[pyfunction]
fn assemble<'py>(py: Python<'py>, source: &str) -> PyResult<Bound<'py, PyBytes>> {
    Program::parse(source)?.assemble(py)
}

#[pymodule]
fn dram_bender(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", bender_core::VERSION)?;
    m.add_class::<Program>()?;
    m.add_class::<Platform>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add("BenderError", py.get_type::<BenderError>())?;
    m.add("UndefinedLabel", py.get_type::<UndefinedLabel>())?;
    m.add("DuplicateLabel", py.get_type::<DuplicateLabel>())?;
    m.add("ProgramTooLarge", py.get_type::<ProgramTooLarge>())?;
    m.add("ReadRunExceedsFifo", py.get_type::<ReadRunExceedsFifo>())?;
    m.add("InvalidInstruction", py.get_type::<InvalidInstruction>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("LoadError", py.get_type::<LoadError>())?;
    Ok(())
}
